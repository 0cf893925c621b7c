from __future__ import annotations

import os
from pathlib import Path

import pytest

from manyflow.dataflow import instantiate
from manyflow.dsl import compile_source
from manyflow.workflows import path as workflow_path

GOLDEN = Path(__file__).parent / "golden"
GEOPHYSICS = Path(workflow_path("geophysics")) / "geophysics.mf"


def golden_scripts():
    """Every well-formed golden script, including the shipped example."""
    return sorted(GOLDEN.glob("*.mf")) + [GEOPHYSICS]


def error_scripts():
    return sorted((GOLDEN / "errors").glob("*.mf"))


def graph_of(text, bindings=None, **kw):
    kw.setdefault("run_id", "test")
    return instantiate(compile_source(text, "<test>"), bindings, **kw)


def graph_from_file(path, **kw):
    kw.setdefault("run_id", "test")
    return instantiate(compile_source(Path(path).read_text(), str(path)), **kw)


def input_root_for(path):
    return Path(path).parent


def drive(g, order=None, value=lambda tid, fid: f"{tid}:{fid}"):
    """Run every task to completion in-process, picking ready tasks via ``order``."""
    order = order or (lambda ready: sorted(ready))
    while True:
        ready = g.ready_tasks()
        if not ready:
            return
        tid = order(ready)[0]
        g.start(tid)
        g.complete_task(tid, {f: value(tid, f) for f in g.spec(tid).outputs})


@pytest.fixture
def run_root(tmp_path, monkeypatch):
    root = tmp_path / "runs"
    monkeypatch.setenv("MANYFLOW_RUN_ROOT", str(root))
    return root


@pytest.fixture
def fast_root():
    """A scratch directory on tmpfs when one is available."""
    import tempfile

    base = "/dev/shm" if os.path.isdir("/dev/shm") and os.access("/dev/shm", os.W_OK) else None
    with tempfile.TemporaryDirectory(dir=base) as d:
        yield Path(d)
