"""Discrete-event cluster simulator.

Time is simulated seconds.  Each shard's dispatcher spends
``dispatch_latency`` per assignment, a task's inputs are staged to its first
node at ``bytes / bandwidth + 0.1 ms`` per transfer, and its outputs are
written back when it finishes.  Stub applications run for real against an
in-memory file map, so artifact digests match local runs.
"""

from __future__ import annotations

import heapq
import random
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .command import artifact_name, layout
from .dataflow import RUNNING, DataflowGraph
from .datastore.cdm import CdmHint, execute_plan, plan_transfers
from .datastore.store import SHARED, UNLIMITED, ArtifactRef, ArtifactStore
from .dispatch import RetryPolicy, RunResult, WorkerPool, build_shards, handle_failure
from .errors import CapacityError, ConfigError, MissingArtifact, UnknownNode
from .events import EventLog
from .stubs import run_virtual

TRANSFER_LATENCY = 1e-4
STORE_KINDS = {"ame": "ame", "shared": "shared", "shared-fs": "shared", "striped": "striped"}


@dataclass
class ClusterConfig:
    node_count: int = 16
    node_memory_bytes: int = UNLIMITED
    dispatch_latency_ms: float = 0.0
    bandwidth_bytes_per_s: float = 1e9
    shared_bandwidth_bytes_per_s: Optional[float] = None
    failure_schedule: tuple = ()
    seed: int = 0
    store: str = "ame"
    chunk_bytes: int = 4096
    persist_all: bool = False
    notify_latency_ms: float = 0.0
    default_duration: float = 1.0
    durations: dict = field(default_factory=dict)
    duration_jitter: float = 0.0

    def __post_init__(self):
        self.failure_schedule = tuple((float(t), str(n)) for t, n in self.failure_schedule)
        self.validate()

    def validate(self):
        if self.node_count < 1:
            raise ConfigError(f"node_count must be >= 1, got {self.node_count}")
        if self.node_memory_bytes <= 0:
            raise ConfigError("node_memory_bytes must be positive")
        if self.dispatch_latency_ms < 0 or self.notify_latency_ms < 0:
            raise ConfigError("latencies must be >= 0")
        if self.bandwidth_bytes_per_s <= 0 or (self.shared_bandwidth_bytes_per_s or 1) <= 0:
            raise ConfigError("bandwidths must be positive")
        if self.default_duration < 0 or any(v < 0 for v in self.durations.values()):
            raise ConfigError("durations must be >= 0")
        if not 0 <= self.duration_jitter < 1:
            raise ConfigError("duration_jitter must be in [0, 1)")
        if self.store not in STORE_KINDS:
            raise ConfigError(f"unknown store {self.store!r}; expected one of {sorted(STORE_KINDS)}")
        if self.chunk_bytes < 1:
            raise ConfigError("chunk_bytes must be >= 1")
        times = [t for t, _ in self.failure_schedule]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ConfigError("failure times must be strictly increasing")
        if any(t < 0 for t in times):
            raise ConfigError("failure times must be >= 0")
        valid = {f"n{i}" for i in range(self.node_count)}
        for _, n in self.failure_schedule:
            if n not in valid:
                raise ConfigError(f"failure schedule names unknown node {n!r}")

    @property
    def dispatch_latency(self):
        return self.dispatch_latency_ms / 1000.0

    @property
    def notify_latency(self):
        return self.notify_latency_ms / 1000.0

    @property
    def shared_bandwidth(self):
        return self.shared_bandwidth_bytes_per_s or self.bandwidth_bytes_per_s

    def to_json(self):
        return {
            "node_count": self.node_count, "node_memory_bytes": self.node_memory_bytes,
            "dispatch_latency_ms": self.dispatch_latency_ms, "bandwidth_bytes_per_s": self.bandwidth_bytes_per_s,
            "shared_bandwidth_bytes_per_s": self.shared_bandwidth_bytes_per_s,
            "failure_schedule": [f"{t:g}:{n}" for t, n in self.failure_schedule], "seed": self.seed,
            "store": self.store, "chunk_bytes": self.chunk_bytes, "persist_all": self.persist_all,
            "notify_latency_ms": self.notify_latency_ms, "default_duration": self.default_duration,
            "durations": dict(sorted(self.durations.items())), "duration_jitter": self.duration_jitter,
        }


_INT_KEYS = {"node_count", "node_memory_bytes", "seed", "chunk_bytes"}
_FLOAT_KEYS = {"dispatch_latency_ms", "bandwidth_bytes_per_s", "shared_bandwidth_bytes_per_s",
               "notify_latency_ms", "default_duration", "duration_jitter"}


def _parse_failures(text):
    out = []
    for item in text.replace(";", ",").split(","):
        item = item.strip()
        if not item:
            continue
        t, sep, node = item.partition(":")
        if not sep:
            raise ConfigError(f"failure entry {item!r} should look like TIME:NODE")
        out.append((float(t), node.strip()))
    return out


def parse_config(text, base=None) -> ClusterConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment.

    ``failure = 10:n3`` may repeat, ``failure_schedule = 10:n3, 20:n7`` lists
    several at once, and ``duration.APP = SECONDS`` sets a per-app default.
    """
    values = dict(base or {})
    durations = dict(values.pop("durations", {}))
    failures = list(values.pop("failure_schedule", ()))
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, val = key.strip(), val.strip()
        try:
            if key in _INT_KEYS:
                values[key] = int(float(val)) if "e" in val.lower() else int(val)
            elif key in _FLOAT_KEYS:
                values[key] = float(val)
            elif key == "store":
                values[key] = val
            elif key == "persist_all":
                if val.lower() not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(val)
                values[key] = val.lower() in ("true", "1", "yes")
            elif key in ("failure", "failure_schedule"):
                failures.extend(_parse_failures(val))
            elif key.startswith("duration."):
                durations[key[len("duration."):]] = float(val)
            else:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
        except ValueError:
            raise ConfigError(f"line {lineno}: bad value {val!r} for {key}") from None
    return ClusterConfig(failure_schedule=tuple(failures), durations=durations, **values)


def load_config(path) -> ClusterConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return parse_config(text)


# event kinds, ordered so simultaneous events resolve deterministically
_FAIL, _DONE, _MSG, _START, _DISPATCH = range(5)


class Simulator:
    """Executor that drives shards over simulated time."""

    def __init__(self, config: ClusterConfig, inputs=None, input_root=None, hints=(), store_root=None):
        self.config = config
        self.inputs = dict(inputs or {})
        self.input_root = Path(input_root) if input_root is not None else None
        self.pending_failures = list(config.failure_schedule)
        self.hints = list(hints)
        self.store_root = store_root

    def inject_failure(self, at, node):
        """Schedule ``node`` to die at simulated time ``at`` (before the run starts)."""
        if node not in {f"n{i}" for i in range(self.config.node_count)}:
            raise UnknownNode(node)
        if at < 0:
            raise ConfigError("failure time must be >= 0")
        self.pending_failures.append((float(at), node))
        self.pending_failures.sort()
        return at, node

    # -- setup --

    def _import_inputs(self, g: DataflowGraph, store):
        for fid, cell in g.futures.items():
            if cell.producer is not None or not cell.is_set:
                continue
            ref = cell.value
            if not isinstance(ref, ArtifactRef):
                continue
            if ref.name in store:
                cell.value = store.ref(ref.name)
                continue
            content = self.inputs.get(ref.name)
            if content is None and self.input_root is not None:
                path = self.input_root / ref.name
                if path.is_file():
                    content = path.read_bytes()
            if content is None:
                raise MissingArtifact(ref.name, "external input not found")
            cell.value = store.adopt_shared(ref, content=content)

    def execute(self, g: DataflowGraph, pool: WorkerPool, policy: RetryPolicy = RetryPolicy(), shards=None,
                hash_fn=None, run_id=None):
        cfg = self.config
        wall0 = time.perf_counter()
        log = EventLog()
        store = ArtifactStore(STORE_KINDS[cfg.store], nodes=pool.nodes, node_memory=cfg.node_memory_bytes,
                              chunk_size=cfg.chunk_bytes, root=self.store_root)
        self._import_inputs(g, store)
        kwargs = {} if hash_fn is None else {"hash_fn": hash_fn}
        plan, shard_list = build_shards(g, pool, policy, log, shards, **kwargs)
        run = _SimRun(self, cfg, g, pool, policy, log, store, plan, shard_list)
        run.go()
        if plan is not None:
            g.absorb([s.graph for s in shard_list])
        status = g.outcome()
        metrics = run.metrics(time.perf_counter() - wall0, status)
        failures = {}
        for s in shard_list:
            failures.update(s.failures)
        return RunResult(status, log, g, metrics, failures, store)


class _SimRun:
    def __init__(self, sim, cfg, g, pool, policy, log, store, plan, shards):
        self.sim, self.cfg, self.g, self.pool, self.policy = sim, cfg, g, pool, policy
        self.log, self.store, self.plan, self.shards = log, store, plan, shards
        self.queue = []
        self.seq = 0
        self.now = 0.0
        self.busy_until = [0.0] * len(shards)
        self.scheduled = [False] * len(shards)
        self.rng = random.Random(cfg.seed)
        self.egress = {}
        self.retries = 0
        self.last_complete = 0.0
        self.completed = 0
        self.messages = 0
        self.hints = list(sim.hints)
        self.plans = []

    def push(self, at, kind, payload):
        self.seq += 1
        heapq.heappush(self.queue, (at, kind, self.seq, payload))

    def owner(self, tid):
        return 0 if self.plan is None else self.plan.owner[tid]

    def kick(self, i):
        if not self.scheduled[i] and self.shards[i].has_ready():
            self.scheduled[i] = True
            self.push(max(self.now, self.busy_until[i]), _DISPATCH, i)

    def kick_all(self):
        for i in range(len(self.shards)):
            self.kick(i)

    def send(self, msgs):
        for m in msgs:
            self.messages += 1
            self.push(self.now + self.cfg.notify_latency, _MSG, m)

    def go(self):
        for at, node in self.sim.pending_failures:
            self.push(at, _FAIL, node)
        for s in self.shards:
            s.submit_all()
        self.apply_hints()
        self.kick_all()
        while self.queue:
            at, kind, _, payload = heapq.heappop(self.queue)
            self.now = self.log.now = at
            if kind == _DISPATCH:
                self.dispatch(payload)
            elif kind == _START:
                self.start(*payload)
            elif kind == _DONE:
                self.done(*payload)
            elif kind == _MSG:
                self.send(self.shards[payload.dest].receive(payload))
                self.kick(payload.dest)
            elif kind == _FAIL:
                self.node_failed(payload)

    def available(self, value):
        return not isinstance(value, ArtifactRef) or self.store.available(value.name)

    def dispatch(self, i):
        self.scheduled[i] = False
        if self.busy_until[i] > self.now:
            self.kick(i)
            return
        shard = self.shards[i]
        latency = self.cfg.dispatch_latency
        while True:
            got = shard.next_assignment(self.available)
            if got is None:
                return
            tid, nodes, attempt, msgs = got
            self.send(msgs)
            if tid is None:
                continue
            self.push(self.now + latency, _START, (tid, attempt, i, tuple(nodes)))
            if latency > 0:
                self.busy_until[i] = self.now + latency
                self.kick(i)
                return

    def _current(self, shard, tid, attempt):
        t = shard.graph.tasks[tid]
        return t.status == RUNNING and t.attempt == attempt

    def start(self, tid, attempt, i, nodes):
        shard = self.shards[i]
        if not self._current(shard, tid, attempt):
            return
        shard.mark_started(tid, nodes, attempt)
        spec = shard.graph.tasks[tid].spec
        node = nodes[0]
        lay = layout(spec)
        files = {}
        stage_time = 0.0
        try:
            for fid, path in lay.inputs:
                ref = shard.graph.futures[fid].value
                for tr in self.store.stage_to(ref.name, node):
                    stage_time += self._transfer(tr, tid)
                files[path] = self.store.get(ref.name)
        except (MissingArtifact, CapacityError) as e:
            self.fail_task(i, tid, attempt, f"staging: {e}")
            return
        rc, files = run_virtual(lay.argv, files, [p for _, p in lay.outputs])
        outs = {}
        for fid, path in lay.outputs:
            if rc == 0 and path in files:
                outs[fid] = files[path]
        if rc != 0:
            outcome = f"exit status {rc}"
        elif len(outs) != len(lay.outputs):
            outcome = "declared output missing"
        else:
            outcome = None
        duration = self.duration(spec)
        self.push(self.now + stage_time + duration, _DONE, (tid, attempt, i, outs, outcome))

    def _transfer(self, tr, tid):
        bw = self.cfg.shared_bandwidth if tr.src == SHARED else self.cfg.bandwidth_bytes_per_s
        self.egress[tr.src] = self.egress.get(tr.src, 0) + tr.bytes
        self.log.emit("xfer", task=tid, node=f"{tr.src}->{tr.dst}", bytes=tr.bytes, artifact=tr.artifact)
        return tr.bytes / bw + TRANSFER_LATENCY

    def duration(self, spec):
        if spec.sim_duration is not None:
            base = spec.sim_duration
        else:
            base = self.cfg.durations.get(spec.app, self.cfg.default_duration)
        j = self.cfg.duration_jitter
        if j:
            base *= 1.0 + self.rng.uniform(-j, j)
        return base

    def fail_task(self, i, tid, attempt, reason):
        shard = self.shards[i]
        self.send(shard.task_failed(tid, attempt, reason))
        if shard.graph.tasks[tid].status != "failed":
            self.retries += 1
        self.kick_all()

    def done(self, tid, attempt, i, contents, outcome):
        shard = self.shards[i]
        if not self._current(shard, tid, attempt):
            return
        if outcome is not None:
            self.fail_task(i, tid, attempt, outcome)
            return
        nodes = self.pool.holders(tid)
        node = nodes[0]
        spec = shard.graph.tasks[tid].spec
        outs = {}
        try:
            for fid in spec.outputs:
                cell = shard.graph.futures[fid]
                name = artifact_name(self.g.run_id, spec, cell)
                before = len(self.store.transfers)
                ref = self.store.put(ArtifactRef(name, persistence=cell.persistence), contents[fid], origin=node)
                for tr in self.store.transfers[before:]:
                    self._transfer(tr, tid)
                outs[fid] = ref
        except CapacityError as e:
            self.fail_task(i, tid, attempt, f"write-back: {e}")
            return
        self.completed += 1
        self.last_complete = self.now
        self.send(shard.complete(tid, outs, attempt))
        if self.hints:
            self.apply_hints()
        self.kick_all()

    def _artifact(self, subject):
        """A hint subject may name a future (``res[0][1]``) or an artifact path."""
        cell = self.g.futures.get(subject)
        if cell is not None:
            for s in self.shards:
                c = s.graph.futures.get(subject)
                if c is not None and c.is_set:
                    return c.value.name
            return None
        return subject if subject in self.store else None

    def apply_hints(self):
        """Execute every hint whose subject artifacts now exist."""
        pending = []
        for h in self.hints:
            subjects = [h.subject] if isinstance(h.subject, str) else list(h.subject)
            names = [self._artifact(x) for x in subjects]
            if any(n is None for n in names):
                pending.append(h)
                continue
            live = [n for n in self.pool.nodes if n not in self.pool.dead]
            targets = tuple(live if h.targets in ("all", ("all",)) else h.targets)
            subject = names[0] if isinstance(h.subject, str) else tuple(names)
            plan = plan_transfers(CdmHint(h.pattern, subject, targets, h.result), self.store)
            for tr in execute_plan(plan, self.store):
                self._transfer(tr, None)
            self.plans.append(plan)
        self.hints = pending

    def node_failed(self, node):
        if node in self.pool.dead:
            return
        self.log.emit("fail", node=node)
        self.store.fail_node(node)
        actions = handle_failure(self.pool, [s.graph for s in self.shards], node, self.policy)
        for a in actions:
            i = self.owner(a.task)
            if a.kind == "retry":
                self.retries += 1
            self.send(self.shards[i].apply_action(a))
        self.kick_all()

    def metrics(self, wall, status):
        makespan = self.last_complete
        done = self.completed
        counts = self.g.counts()
        return {
            "status": "quiescent" if status else "deadlocked",
            "makespan": makespan,
            "throughput": done / makespan if makespan > 0 else float("inf") if done else 0.0,
            "tasks": len(self.g.tasks),
            "done": counts.get("done", 0),
            "failed": counts.get("failed", 0),
            "completions": done,
            "retries": self.retries,
            "notifications": sum(s.notifications_sent for s in self.shards),
            "messages": self.messages,
            "egress": dict(sorted(self.egress.items())),
            "hint_plans": [{"pattern": p.hint.pattern, "origin": p.origin, "rounds": p.rounds,
                            "copies": p.total_copies, "origin_egress": p.origin_egress} for p in self.plans],
            "shards": len(self.shards),
            "dispatched_per_shard": [s.dispatched for s in self.shards],
            "wall_clock": wall,
            "events": len(self.log),
        }


def run_simulated(g: DataflowGraph, config: ClusterConfig, mode="central", shards=1, policy=RetryPolicy(),
                  inputs=None, input_root=None, hash_fn=None, hints=(), store_root=None) -> RunResult:
    """Simulate ``g`` on ``config``; ``mode`` is ``central`` or ``sharded``."""
    if mode not in ("central", "sharded"):
        raise ConfigError(f"unknown mode {mode!r}")
    sim = Simulator(config, inputs, input_root, hints, store_root)
    pool = WorkerPool(config.node_count)
    return sim.execute(g, pool, policy, shards=None if mode == "central" else shards, hash_fn=hash_fn)


def inject_failure(sim: Simulator, time_, node):
    return sim.inject_failure(time_, node)
