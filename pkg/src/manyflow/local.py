"""Local executor: every task is a real subprocess in a private directory.

Layout of a run directory::

    events.jsonl   append-only event log
    manifest.json  run manifest (status, done tasks, digests of script/config)
    artifacts.jsonl
    artifacts/     the shared store
    tasks/<id>/    per-task working directories
"""

from __future__ import annotations

import json
import os
import queue
import shutil
import subprocess
import sys
import threading
import time
from pathlib import Path

from .command import artifact_name, layout
from .dataflow import DONE, READY, DataflowGraph
from .datastore.store import ArtifactRef, ArtifactStore
from .dispatch import RetryPolicy, RunResult, WorkerPool, build_shards
from .errors import MissingArtifact, MissingOutput, SpawnError, TaskExitError
from .events import EventLog, read_log
from .stubs import STUBS


def resolve_program(name):
    """``("stub", name)`` for shipped stubs, else ``("exec", path)``; SpawnError if neither."""
    if name in STUBS:
        return "stub", name
    if os.sep in name:
        if os.access(name, os.X_OK):
            return "exec", name
        raise SpawnError(f"{name}: not an executable file")
    found = shutil.which(name)
    if found is None:
        raise SpawnError(f"{name}: command not found")
    return "exec", found


class SpawnLauncher:
    """One fresh process per task."""

    stub_prefix = [sys.executable, "-m", "manyflow.stubs"]

    def run(self, argv, cwd):
        kind, prog = resolve_program(argv[0])
        cmd = self.stub_prefix + list(argv) if kind == "stub" else [prog] + list(argv[1:])
        with open(os.path.join(cwd, ".stderr"), "wb") as err:
            try:
                return subprocess.run(cmd, cwd=cwd, stdin=subprocess.DEVNULL, stdout=err, stderr=err).returncode
            except OSError as e:
                raise SpawnError(f"{argv[0]}: {e}") from e

    def close(self):
        pass


class WarmLauncher(SpawnLauncher):
    """Stub commands go to a long-lived stub process per worker thread.

    Other commands still spawn a fresh process.
    """

    def __init__(self):
        self._local = threading.local()
        self._procs = []
        self._lock = threading.Lock()

    def _proc(self):
        p = getattr(self._local, "proc", None)
        if p is None or p.poll() is not None:
            p = subprocess.Popen(self.stub_prefix + ["--serve"], stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                 text=True, bufsize=1)
            self._local.proc = p
            with self._lock:
                self._procs.append(p)
        return p

    def run(self, argv, cwd):
        if argv[0] not in STUBS:
            return super().run(argv, cwd)
        p = self._proc()
        p.stdin.write(json.dumps({"cwd": cwd, "argv": list(argv)}) + "\n")
        reply = p.stdout.readline()
        if not reply:
            raise SpawnError("stub service exited")
        return json.loads(reply)["rc"]

    def close(self):
        with self._lock:
            for p in self._procs:
                try:
                    p.stdin.close()
                    p.wait(timeout=5)
                except (OSError, subprocess.TimeoutExpired):
                    p.kill()
            self._procs.clear()


def _stage(src, dest):
    try:
        os.link(src, dest)
    except OSError:
        shutil.copyfile(src, dest)


class LocalExecutor:
    def __init__(self, run_dir, workers=1, launcher=None, input_root=None, keep_task_dirs=True):
        self.run_dir = Path(run_dir)
        self.workers = workers
        self.launcher = launcher or SpawnLauncher()
        self.input_root = Path(input_root) if input_root is not None else Path.cwd()
        self.keep_task_dirs = keep_task_dirs
        self.restored = set()
        self.stopping = threading.Event()

    # -- setup --

    def check_programs(self, g: DataflowGraph):
        for name in sorted({t.spec.command[0] for t in g.tasks.values() if t.spec.command}):
            if isinstance(name, str):
                resolve_program(name)

    def _import_inputs(self, g, store):
        for cell in g.futures.values():
            if cell.producer is not None or not cell.is_set or not isinstance(cell.value, ArtifactRef):
                continue
            name = cell.value.name
            if store.shared.exists(name):
                cell.value = store.adopt_shared(cell.value)
                continue
            src = self.input_root / name
            if not src.is_file():
                raise MissingArtifact(name, f"external input not found at {src}")
            cell.value = store.adopt_shared(cell.value, path=src)

    def restore(self, g: DataflowGraph, store, done):
        """Mark tasks from a previous attempt done when all their outputs survive."""
        order = sorted((t for t in done if t in g.tasks), key=lambda t: (g.tasks[t].depth, g.tasks[t].spec.seq))
        for tid in order:
            t = g.tasks[tid]
            if t.status != READY:
                continue
            outs = {}
            for fid in t.spec.outputs:
                cell = g.futures[fid]
                name = artifact_name(g.run_id, t.spec, cell)
                if not store.shared.exists(name):
                    break
                outs[fid] = store.adopt_shared(ArtifactRef(name, persistence=cell.persistence))
            else:
                g.start(tid)
                g.complete_task(tid, outs)
                t.attempt = 0
                self.restored.add(tid)

    # -- execution --

    def execute(self, g: DataflowGraph, pool: WorkerPool, policy: RetryPolicy = RetryPolicy(), shards=None,
                hash_fn=None, done=()):
        wall0 = time.perf_counter()
        self.check_programs(g)
        self.run_dir.mkdir(parents=True, exist_ok=True)
        (self.run_dir / "tasks").mkdir(exist_ok=True)
        store = ArtifactStore("shared", nodes=pool.nodes, root=self.run_dir / "artifacts")
        self.store = store
        self.tasks_dir = str(self.run_dir / "tasks")
        self.artifacts_dir = str(self.run_dir / "artifacts")
        self._import_inputs(g, store)
        if done:
            self.restore(g, store, done)
        sink = open(self.run_dir / "events.jsonl", "a")
        log = EventLog(sink=sink, clock=lambda: time.perf_counter() - wall0)
        kwargs = {} if hash_fn is None else {"hash_fn": hash_fn}
        try:
            plan, shard_list = build_shards(g, pool, policy, log, shards, **kwargs)
            run = _LocalRun(self, g, pool, log, store, plan, shard_list)
            run.go()
        finally:
            log.flush()
            sink.close()
            self.launcher.close()
        if plan is not None:
            g.absorb([s.graph for s in shard_list])
        status = g.outcome()
        wall = time.perf_counter() - wall0
        completions = sum(1 for e in log.events if e.kind == "complete")
        failures = {}
        for s in shard_list:
            failures.update(s.failures)
        counts = g.counts()
        metrics = {
            "status": "quiescent" if status else ("interrupted" if self.stopping.is_set() else "deadlocked"),
            "makespan": wall,
            "throughput": completions / run.busy_time if run.busy_time > 0 else 0.0,
            "tasks": len(g.tasks),
            "done": counts.get("done", 0),
            "failed": counts.get("failed", 0),
            "restored": len(self.restored),
            "completions": completions,
            "retries": sum(1 for e in log.events if e.kind == "retry"),
            "notifications": sum(s.notifications_sent for s in shard_list),
            "shards": len(shard_list),
            "workers": self.workers,
            "dispatched_per_shard": [s.dispatched for s in shard_list],
            "wall_clock": wall,
            "dispatch_seconds": run.busy_time,
            "events": len(log),
        }
        store.write_manifest(self.run_dir / "artifacts.jsonl")
        return RunResult(status, log, g, metrics, failures, store)

    def run_task(self, spec, inputs, outputs):
        """Stage, launch, and collect one task; returns ``{future: ArtifactRef}``.

        ``inputs`` maps input futures to their refs, ``outputs`` maps output
        futures to ``(persistence, artifact name)``.
        """
        tdir = os.path.join(self.tasks_dir, spec.id)
        try:
            os.mkdir(tdir)
        except FileExistsError:
            shutil.rmtree(tdir)
            os.mkdir(tdir)
        lay = layout(spec)
        root = self.artifacts_dir
        for fid, path in lay.inputs:
            _stage(os.path.join(root, inputs[fid].name), os.path.join(tdir, path))
        rc = self.launcher.run(lay.argv, tdir)
        if rc != 0:
            raise TaskExitError(spec.id, rc)
        outs = {}
        for fid, path in lay.outputs:
            p = os.path.join(tdir, path)
            if not os.path.isfile(p):
                raise MissingOutput(spec.id, path)
            persistence, name = outputs[fid]
            outs[fid] = self.store.adopt_shared(ArtifactRef(name, persistence=persistence), path=p)
        if not self.keep_task_dirs:
            shutil.rmtree(tdir, ignore_errors=True)
        return outs


class _LocalRun:
    """Shard coordinator threads plus a pool of worker threads."""

    def __init__(self, ex: LocalExecutor, g, pool, log, store, plan, shards):
        self.ex, self.g, self.pool, self.log, self.store, self.plan = ex, g, pool, log, store, plan
        self.shards = shards
        self.inboxes = [queue.SimpleQueue() for _ in shards]
        self.work = queue.SimpleQueue()
        self.cv = threading.Lock()
        self.inflight = 0
        self.idle = 0
        self.hungry = set()
        self.error = None
        self.busy_time = 0.0

    def post(self, dest, msg):
        with self.cv:
            self.inflight += 1
        self.inboxes[dest].put(msg)

    def go(self):
        for s in self.shards:
            s.submit_all()
        workers = [threading.Thread(target=self.worker, name=f"worker-{k}", daemon=True)
                   for k in range(self.ex.workers)]
        coords = [threading.Thread(target=self.coordinate, args=(i,), name=f"shard-{i}", daemon=True)
                  for i in range(len(self.shards))]
        t0 = time.perf_counter()
        for t in workers + coords:
            t.start()
        try:
            for t in coords:
                while t.is_alive():
                    t.join(0.2)
        except KeyboardInterrupt:
            self.ex.stopping.set()
            for i in range(len(self.shards)):
                self.post(i, ("wake",))
            for t in coords:
                t.join()
        self.busy_time = time.perf_counter() - t0
        for _ in workers:
            self.work.put(None)
        for t in workers:
            t.join()
        if self.error is not None:
            raise self.error

    def worker(self):
        ex = self.ex
        while True:
            item = self.work.get()
            if item is None:
                return
            shard, tid, attempt, spec, inputs, outputs = item
            # the work item's in-flight count carries over to the reply
            box = self.inboxes[shard]
            try:
                outs = ex.run_task(spec, inputs, outputs)
                box.put(("done", tid, attempt, outs))
            except (TaskExitError, MissingOutput, SpawnError, OSError) as e:
                box.put(("failed", tid, attempt, str(e)))
            except BaseException as e:     # noqa: BLE001 - surfaced by the coordinator
                box.put(("crash", tid, attempt, e))

    def _wake_hungry(self, me):
        with self.cv:
            hungry, self.hungry = self.hungry - {me}, set()
        for i in sorted(hungry):
            self.post(i, ("wake",))

    def _dispatch(self, i):
        shard = self.shards[i]
        if self.ex.stopping.is_set():
            return
        while True:
            got = shard.next_assignment()
            if got is None:
                if shard.has_ready():
                    with self.cv:
                        self.hungry.add(i)
                return
            tid, nodes, attempt, _ = got
            t = shard.graph.tasks[tid]
            futures = shard.graph.futures
            inputs = {fid: futures[fid].value for fid in t.spec.inputs}
            outputs = {fid: (futures[fid].persistence, artifact_name(self.g.run_id, t.spec, futures[fid]))
                       for fid in t.spec.outputs}
            shard.mark_started(tid, nodes, attempt)
            with self.cv:
                self.inflight += 1
            self.work.put((i, tid, attempt, t.spec, inputs, outputs))

    def coordinate(self, i):
        shard = self.shards[i]
        inbox = self.inboxes[i]
        nshards = len(self.shards)
        self._dispatch(i)
        while True:
            with self.cv:
                self.idle += 1
                if self.idle == nshards and self.inflight == 0:
                    for box in self.inboxes:
                        box.put(("stop",))
            msg = inbox.get()
            with self.cv:
                self.idle -= 1
            kind = msg[0]
            if kind == "stop":
                return
            try:
                if kind == "done":
                    _, tid, attempt, outs = msg
                    for m in shard.complete(tid, outs, attempt):
                        self.post(m.dest, ("msg", m))
                    self.log.flush()
                    self._wake_hungry(i)
                elif kind == "failed":
                    _, tid, attempt, reason = msg
                    for m in shard.task_failed(tid, attempt, reason):
                        self.post(m.dest, ("msg", m))
                    self._wake_hungry(i)
                elif kind == "crash":
                    self.error = msg[3]
                    self.ex.stopping.set()
                    self.pool.release(msg[1])
                elif kind == "msg":
                    for m in shard.receive(msg[1]):
                        self.post(m.dest, ("msg", m))
                self._dispatch(i)
            except BaseException as e:     # noqa: BLE001
                self.error = e
                self.ex.stopping.set()
            finally:
                with self.cv:
                    self.inflight -= 1


def done_tasks_from_log(path):
    """Task ids with a recorded completion in an existing event log."""
    if not Path(path).exists():
        return set()
    done = set()
    for ev in read_log(path):
        if ev.kind == "complete":
            done.add(ev.task)
        elif ev.kind in ("retry", "fail") and ev.task is not None:
            done.discard(ev.task)
    return done


def run_local(g: DataflowGraph, workers, workdir, mode="central", shards=1, policy=RetryPolicy(),
              warm=False, input_root=None, done=()) -> RunResult:
    """Run ``g`` with ``workers`` concurrent subprocesses under ``workdir``."""
    launcher = WarmLauncher() if warm else SpawnLauncher()
    ex = LocalExecutor(workdir, workers, launcher, input_root)
    pool = WorkerPool(workers)
    return ex.execute(g, pool, policy, shards=None if mode == "central" else shards, done=done)
