from __future__ import annotations

import json
import os
import signal
import subprocess
import sys
import time

import pytest

from manyflow.cli import main

from .conftest import GEOPHYSICS, GOLDEN, error_scripts

EXPECTED_EXIT = {
    "syntax.mf": 1,
    "double_assign.mf": 1,
    "arity.mf": 1,
    "dynamic_double.mf": 1,
    "cycle.mf": 2,
    "unbound.mf": 2,
}


def events(run_dir):
    return [json.loads(line) for line in (run_dir / "events.jsonl").read_text().splitlines()]


@pytest.mark.parametrize("path", error_scripts(), ids=lambda p: p.name)
def test_error_scripts_exit_codes(path, run_root, capsys):
    assert main(["validate", str(path)]) == EXPECTED_EXIT[path.name]
    err = capsys.readouterr().err
    assert err.strip()
    assert main(["run", "--sim", str(path)]) == EXPECTED_EXIT[path.name]


def test_syntax_error_names_file_and_line(capsys):
    main(["validate", str(GOLDEN / "errors" / "syntax.mf")])
    err = capsys.readouterr().err
    assert "syntax.mf:" in err


def test_validate_and_graph(tmp_path, capsys):
    assert main(["validate", str(GOLDEN / "diamond.mf")]) == 0
    assert "4 tasks" in capsys.readouterr().out
    out = tmp_path / "g.dot"
    assert main(["graph", str(GOLDEN / "diamond.mf"), "-o", str(out)]) == 0
    text = out.read_text()
    assert text.startswith("digraph") and text.count("shape=box") == 4
    assert main(["graph", str(GOLDEN / "pipeline.mf")]) == 0
    assert capsys.readouterr().out.count("->") == 4


def test_sim_run_writes_run_directory(run_root, capsys):
    rc = main(["run", "--sim", "--mode", "sharded", "--shards", "2", "--run-id", "r1", "--emit-graph",
               "--metrics", str(GOLDEN / "diamond.mf")])
    assert rc == 0
    d = run_root / "r1"
    for name in ("manifest.json", "events.jsonl", "artifacts.jsonl", "metrics.json", "graph.dot"):
        assert (d / name).is_file()
    manifest = json.loads((d / "manifest.json").read_text())
    assert manifest["status"] == "completed" and manifest["backend"] == "sim" and manifest["shards"] == 2
    metrics = json.loads((d / "metrics.json").read_text())
    assert metrics["done"] == 4
    printed = capsys.readouterr().out
    assert json.loads(printed[:printed.rindex("}") + 1])["tasks"] == 4
    names = {json.loads(line)["name"] for line in (d / "artifacts.jsonl").read_text().splitlines()}
    assert "joined.dat" in names


def test_local_run_geophysics(run_root):
    assert main(["run", "--local", "--workers", "4", "--warm-stubs", "--run-id", "geo", str(GEOPHYSICS)]) == 0
    states = sorted((run_root / "geo" / "artifacts" / "out").glob("state_*.dat"))
    assert states and all(p.stat().st_size > 0 for p in states)


def test_existing_run_id_is_refused(run_root):
    args = ["run", "--sim", "--run-id", "dup", str(GOLDEN / "pipeline.mf")]
    assert main(args) == 0
    assert main(args) == 4


def test_deadlock_exit_code(tmp_path, run_root, capsys):
    script = tmp_path / "dead.mf"
    script.write_text('type file;\napp (file o) f() { "fail" o }\nfile x;\nx = f();\n')
    assert main(["run", "--local", "--workers", "1", "--run-id", "d", str(script)]) == 3
    assert "failed" in capsys.readouterr().err
    metrics = json.loads((run_root / "d" / "metrics.json").read_text())
    assert metrics["unset"] == ["x"]
    assert "exited with status" in next(iter(metrics["failure_reasons"].values()))


@pytest.mark.parametrize("extra", [["--shards", "0"], ["--hint", "nonsense"], ["--config", "__missing__.conf"]])
def test_config_exit_code(extra, run_root):
    rc = main(["run", "--sim", *extra, str(GOLDEN / "pipeline.mf")])
    assert rc in (4, 5)
    if extra[0] != "--config":
        assert rc == 4


def test_bad_config_file_exit_code(tmp_path, run_root):
    conf = tmp_path / "c.conf"
    conf.write_text("node_count = 0\n")
    assert main(["run", "--sim", "--config", str(conf), str(GOLDEN / "pipeline.mf")]) == 4


def test_missing_input_and_unknown_program_exit_5(tmp_path, run_root):
    script = tmp_path / "p.mf"
    script.write_text('type file;\napp (file o) f(file i) { "cp" i o }\nfile a <"absent.dat">;\nfile b;\nb = f(a);\n')
    assert main(["run", "--local", "--run-id", "m", str(script)]) == 5
    script.write_text('type file;\napp (file o) f() { "no-such-tool-here" o }\nfile b;\nb = f();\n')
    assert main(["run", "--local", "--run-id", "u", str(script)]) == 5


def test_bench_reports_json(capsys):
    assert main(["bench", "fanout(2000)", "--shards", "4"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert set(report["results"]) == {"central", "sharded(S=4)"}
    assert report["speedup"] > 1.5


def slow_script(tmp_path, n):
    tool = tmp_path / "slow.sh"
    tool.write_text('#!/bin/sh\nsleep 0.15\necho "$2" > "$1"\n')
    tool.chmod(0o755)
    script = tmp_path / "slow.mf"
    script.write_text(f'type file;\napp (file o) s(int k) {{ "{tool}" o k }}\nfile out[];\n'
                      f"foreach k in [0:{n - 1}] {{\n  out[k] = s(k);\n}}\n")
    return script


def test_interrupt_then_resume(tmp_path, run_root):
    n = 20
    script = slow_script(tmp_path, n)
    env = dict(os.environ, MANYFLOW_RUN_ROOT=str(run_root))
    cmd = [sys.executable, "-m", "manyflow.cli", "run", "--local", "--workers", "1", "--run-id", "int", str(script)]
    p = subprocess.Popen(cmd, env=env, stdout=subprocess.PIPE, stderr=subprocess.PIPE)
    log = run_root / "int" / "events.jsonl"
    deadline = time.time() + 30
    while time.time() < deadline:
        if log.exists() and log.read_text().count('"complete"') >= 3:
            break
        time.sleep(0.05)
    p.send_signal(signal.SIGINT)
    assert p.wait(30) == 130
    manifest = json.loads((run_root / "int" / "manifest.json").read_text())
    assert manifest["status"] == "interrupted"
    first = {e["task"] for e in events(run_root / "int") if e["kind"] == "complete"}
    assert 3 <= len(first) < n

    assert main(["run", "--resume", "int", str(script)]) == 0
    completes = [e["task"] for e in events(run_root / "int") if e["kind"] == "complete"]
    # every task completed exactly once across both attempts
    assert sorted(completes) == sorted(set(completes)) and len(completes) == n
    metrics = json.loads((run_root / "int" / "metrics.json").read_text())
    assert metrics["restored"] == len(first)


def test_resume_refused_when_script_changes(tmp_path, run_root):
    script = tmp_path / "p.mf"
    script.write_text((GOLDEN / "pipeline.mf").read_text())
    (tmp_path / "in.dat").write_text("x\n")
    assert main(["run", "--local", "--run-id", "c", str(script)]) == 0
    script.write_text(script.read_text() + "\n// edited\n")
    assert main(["run", "--resume", "c", str(script)]) == 4
    assert main(["run", "--resume", "nope", str(script)]) == 4
