"""``manyflow`` command line: validate, run, graph, bench.

Exit codes: 0 success, 1 syntax/type error, 2 cycle or unbound input,
3 run deadlocked, 4 configuration error, 5 spawn or storage failure,
130 interrupted.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import time
from pathlib import Path

from .dataflow import instantiate
from .datastore.cdm import PATTERNS, CdmHint
from .datastore.store import ArtifactRef
from .dispatch import RetryPolicy
from .dsl import compile_source
from .dsl.diagnostics import DiagnosticErrors
from .errors import (
    BadHint, ConfigError, CycleError, DoubleAssignError, ManyflowError, MissingArtifact, SpawnError,
    StoreIoError, UnboundInputError,
)
from .simcluster import ClusterConfig, load_config, run_simulated
from .workloads import parse_workload

EXIT_OK, EXIT_SOURCE, EXIT_GRAPH, EXIT_DEADLOCK, EXIT_CONFIG, EXIT_IO, EXIT_INTERRUPT = 0, 1, 2, 3, 4, 5, 130


def exit_code_for(err) -> int:
    if isinstance(err, (DiagnosticErrors, DoubleAssignError)):
        return EXIT_SOURCE
    if isinstance(err, (CycleError, UnboundInputError)):
        return EXIT_GRAPH
    if isinstance(err, (ConfigError, BadHint)):
        return EXIT_CONFIG
    if isinstance(err, (SpawnError, StoreIoError, MissingArtifact, OSError)):
        return EXIT_IO
    if isinstance(err, KeyboardInterrupt):
        return EXIT_INTERRUPT
    return EXIT_SOURCE


def _err(msg):
    print(msg, file=sys.stderr)


def run_root() -> Path:
    return Path(os.environ.get("MANYFLOW_RUN_ROOT", "runs"))


def _read_script(path):
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read script {path}: {e}") from e


def _bindings(items):
    out = {}
    for item in items or ():
        name, sep, path = item.partition("=")
        if not sep or not name or not path:
            raise ConfigError(f"--bind expects NAME=PATH, got {item!r}")
        out[name] = ArtifactRef(path, persistence="persistent")
    return out


def parse_hint(text) -> CdmHint:
    """``PATTERN=ARTIFACT:TARGETS``; TARGETS is ``all`` or a comma list of nodes.

    For gather, ARTIFACT is a comma list of parts and TARGETS one node.
    """
    pattern, sep, rest = text.partition("=")
    subject, sep2, targets = rest.rpartition(":")
    if not sep or not sep2 or not subject or not targets:
        raise BadHint(f"--hint expects PATTERN=ARTIFACT:TARGETS, got {text!r}")
    if pattern not in PATTERNS:
        raise BadHint(f"unknown hint pattern {pattern!r}; expected one of {', '.join(PATTERNS)}")
    nodes = ("all",) if targets == "all" else tuple(t for t in targets.split(",") if t)
    subj = tuple(s for s in subject.split(",") if s) if pattern == "gather" else subject
    return CdmHint(pattern, subj, nodes)


def compile_and_instantiate(script, bindings=None, persist_all=False, run_id=None):
    source = _read_script(script)
    prog = compile_source(source, str(script))
    g = instantiate(prog, bindings, persist_all=persist_all, run_id=run_id)
    return source, prog, g


# -- validate / graph --------------------------------------------------------------

def cmd_validate(args) -> int:
    _, prog, g = compile_and_instantiate(args.script, _bindings(args.bind))
    print(f"{args.script}: ok ({len(prog.apps)} apps, {len(g.tasks)} tasks, {len(g.futures)} futures)")
    return EXIT_OK


def cmd_graph(args) -> int:
    _, _, g = compile_and_instantiate(args.script, _bindings(args.bind), run_id=args.run_id)
    text = g.to_dot()
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# -- run ---------------------------------------------------------------------------

def _digest_text(text):
    return hashlib.blake2b(text.encode(), digest_size=8).hexdigest()


def _new_run_id(script):
    return f"{Path(script).stem}-{time.strftime('%Y%m%d-%H%M%S')}-{os.getpid()}"


def _load_manifest(run_dir):
    path = run_dir / "manifest.json"
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"no run manifest at {path}") from None
    except (OSError, ValueError) as e:
        raise ConfigError(f"unreadable run manifest {path}: {e}") from e


def _write_json(path, obj):
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)


def _config(args):
    cfg = load_config(args.config) if args.config else ClusterConfig()
    if args.workers is not None and args.sim:
        cfg = dataclasses.replace(cfg, node_count=args.workers)
    return cfg


def cmd_run(args) -> int:
    from .local import done_tasks_from_log, run_local

    if args.shards < 1:
        raise ConfigError("--shards must be >= 1")
    if args.workers is not None and args.workers < 1:
        raise ConfigError("--workers must be >= 1")
    cfg = _config(args)
    root = run_root()
    done = set()
    if args.resume:
        if args.sim:
            raise ConfigError("--resume applies to local runs")
        run_id = args.resume
        run_dir = root / run_id
        previous = _load_manifest(run_dir)
        done = set(previous.get("done_tasks", ())) | done_tasks_from_log(run_dir / "events.jsonl")
    else:
        run_id = args.run_id or _new_run_id(args.script)
        run_dir = root / run_id
        if (run_dir / "manifest.json").exists():
            raise ConfigError(f"run {run_id} already exists; use --resume {run_id}")
    hints = [parse_hint(h) for h in args.hint or ()]
    script = Path(args.script)
    input_root = Path(args.inputs) if args.inputs else script.resolve().parent
    source, prog, g = compile_and_instantiate(script, _bindings(args.bind),
                                              persist_all=args.persist_all or cfg.persist_all, run_id=run_id)
    run_dir.mkdir(parents=True, exist_ok=True)
    if args.emit_graph:
        (run_dir / "graph.dot").write_text(g.to_dot())
    mode = args.mode
    manifest = {
        "run_id": run_id,
        "script": {"path": str(script), "digest": _digest_text(source)},
        "config_digest": _digest_text(json.dumps(cfg.to_json(), sort_keys=True)),
        "backend": "sim" if args.sim else "local",
        "mode": mode,
        "shards": args.shards if mode == "sharded" else 1,
        "workers": args.workers if args.workers is not None else (cfg.node_count if args.sim else 4),
        "status": "running",
        "done_tasks": sorted(done),
    }
    if args.resume and previous["script"]["digest"] != manifest["script"]["digest"]:
        raise ConfigError(f"script changed since run {run_id} started; refusing to resume")
    _write_json(run_dir / "manifest.json", manifest)

    policy = RetryPolicy(max_retries=args.max_retries)
    interrupted = False
    try:
        if args.sim:
            result = run_simulated(g, cfg, mode, args.shards, policy, input_root=input_root, hints=hints,
                                   store_root=run_dir / "artifacts")
            result.log.dump(run_dir / "events.jsonl")
            result.store.write_manifest(run_dir / "artifacts.jsonl")
        else:
            if hints:
                _err("note: transfer hints only affect node-memory stores; ignored for local runs")
            result = run_local(g, manifest["workers"], run_dir, mode, args.shards, policy,
                               warm=args.warm_stubs, input_root=input_root, done=done)
            interrupted = result.metrics["status"] == "interrupted"
    except BaseException as e:
        manifest["status"] = "interrupted" if isinstance(e, KeyboardInterrupt) else "failed"
        manifest["error"] = str(e)
        _write_json(run_dir / "manifest.json", manifest)
        raise

    done_now = sorted(t for t, node in g.tasks.items() if node.status == "done")
    manifest["done_tasks"] = sorted(set(done) | set(done_now))
    manifest["status"] = "completed" if result.ok else ("interrupted" if interrupted else "deadlocked")
    _write_json(run_dir / "manifest.json", manifest)
    metrics = dict(result.metrics)
    if not result.ok and not interrupted:
        metrics["unset"] = sorted(result.status.unset)
        metrics["failed_tasks"] = result.status.failed
        metrics["failure_reasons"] = result.failures
    _write_json(run_dir / "metrics.json", metrics)
    if args.metrics:
        print(json.dumps(metrics, indent=2, sort_keys=True))
    print(f"run {run_id}: {manifest['status']} ({metrics['done']}/{metrics['tasks']} tasks done) in {run_dir}")
    if not result.ok:
        for tid in getattr(result.status, "failed", ()):
            _err(f"task {tid} failed: {result.failures.get(tid, '')}")
        return EXIT_INTERRUPT if interrupted else EXIT_DEADLOCK
    return EXIT_OK


# -- bench -------------------------------------------------------------------------

def cmd_bench(args) -> int:
    name, text = parse_workload(args.workload)
    cfg = load_config(args.config) if args.config else ClusterConfig(dispatch_latency_ms=1.0, node_count=4096)
    prog = compile_source(text, f"<{name}>")
    modes = [("central", 1)] if args.mode == "central" else [("sharded", args.shards)] if args.mode == "sharded" \
        else [("central", 1), ("sharded", args.shards)]
    report = {"workload": args.workload, "tasks": prog.instances, "backend": "local" if args.local else "sim",
              "config": cfg.to_json() if not args.local else None, "results": {}}
    for mode, shards in modes:
        g = instantiate(prog, run_id=f"bench-{mode}")
        if args.local:
            import tempfile

            from .local import run_local

            with tempfile.TemporaryDirectory(dir=os.environ.get("MANYFLOW_RUN_ROOT")) as d:
                res = run_local(g, args.workers or 1, d, mode, shards, warm=args.warm_stubs)
        else:
            res = run_simulated(g, cfg, mode, shards)
        m = res.metrics
        key = mode if mode == "central" else f"sharded(S={shards})"
        report["results"][key] = {k: m[k] for k in ("status", "throughput", "makespan", "egress", "wall_clock",
                                                   "notifications", "dispatched_per_shard") if k in m}
        if not args.local and cfg.dispatch_latency_ms > 0:
            report["results"][key]["dispatch_bound"] = shards * 1000.0 / cfg.dispatch_latency_ms
    results = list(report["results"].values())
    if len(results) == 2 and results[0]["throughput"]:
        report["speedup"] = results[1]["throughput"] / results[0]["throughput"]
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


# -- entry point -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="manyflow", description="Run many-task dataflow scripts.")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="parse, type-check and instantiate a script")
    v.add_argument("script")
    v.add_argument("--bind", action="append", metavar="NAME=PATH", help="bind an input variable to a file")
    v.set_defaults(fn=cmd_validate)

    gr = sub.add_parser("graph", help="print the task graph as DOT")
    gr.add_argument("script")
    gr.add_argument("--bind", action="append", metavar="NAME=PATH")
    gr.add_argument("--run-id", default="run", help="run id used in generated artifact names")
    gr.add_argument("-o", "--output", help="write DOT here instead of stdout")
    gr.set_defaults(fn=cmd_graph)

    r = sub.add_parser("run", help="execute a script")
    r.add_argument("script")
    backend = r.add_mutually_exclusive_group()
    backend.add_argument("--sim", action="store_true", help="simulated cluster")
    backend.add_argument("--local", action="store_true", help="real subprocesses (default)")
    r.add_argument("--mode", choices=("central", "sharded"), default="central")
    r.add_argument("--shards", type=int, default=4)
    r.add_argument("--workers", type=int, help="local worker count, or simulated node count")
    r.add_argument("--config", help="cluster config file (key = value)")
    r.add_argument("--resume", metavar="RUN_ID", help="continue an interrupted local run")
    r.add_argument("--run-id", help="name for a new run (default: script name and time)")
    r.add_argument("--emit-graph", action="store_true", help="also write graph.dot into the run directory")
    r.add_argument("--hint", action="append", metavar="PATTERN=ARTIFACT:TARGETS",
                   help="collective transfer hint, e.g. broadcast=init.dat:all")
    r.add_argument("--bind", action="append", metavar="NAME=PATH")
    r.add_argument("--inputs", metavar="DIR", help="directory for mapped input files (default: script's)")
    r.add_argument("--persist-all", action="store_true", help="write every artifact through to shared storage")
    r.add_argument("--warm-stubs", action="store_true", help="serve stub apps from long-lived worker processes")
    r.add_argument("--max-retries", type=int, default=3)
    r.add_argument("--metrics", action="store_true", help="print the metrics JSON")
    r.set_defaults(fn=cmd_run)

    b = sub.add_parser("bench", help="synthetic throughput benchmark")
    b.add_argument("workload", help="fanout(N), pipeline(N) or diamond-mesh(W,D)")
    b.add_argument("--mode", choices=("central", "sharded", "both"), default="both")
    b.add_argument("--shards", type=int, default=4)
    b.add_argument("--config", help="cluster config (default: 4096 nodes, 1 ms dispatch latency)")
    b.add_argument("--local", action="store_true", help="run real processes instead of simulating")
    b.add_argument("--workers", type=int)
    b.add_argument("--warm-stubs", action="store_true")
    b.set_defaults(fn=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except KeyboardInterrupt:
        _err("interrupted")
        return EXIT_INTERRUPT
    except DiagnosticErrors as e:
        for d in e.diagnostics:
            _err(str(d))
        return EXIT_SOURCE
    except (ManyflowError, OSError) as e:
        _err(f"{type(e).__name__}: {e}")
        return exit_code_for(e)


if __name__ == "__main__":
    sys.exit(main())
