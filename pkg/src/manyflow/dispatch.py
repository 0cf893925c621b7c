"""Task dispatch: worker pool, shard coordinators, allocation, and failure handling.

A :class:`Shard` holds the evaluation state for the tasks it owns and the
ready queue it dispatches from.  Central dispatch is one shard over the whole
graph; sharded dispatch partitions tasks by a stable hash of their id and
routes future-set notifications between shards as messages.  Executors (the
simulator and the local process runner) drive shards through the same calls.
"""

from __future__ import annotations

import heapq
import threading
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

from .dataflow import DONE, FAILED, READY, RUNNING, DataflowGraph
from .datastore.ring import fnv1a64
from .errors import ConfigError, UnknownNode
from .events import EventLog


def node_ids(count):
    return [f"n{i}" for i in range(count)]


class WorkerPool:
    """Nodes with one slot each; multi-node reservations are all-or-nothing."""

    def __init__(self, nodes):
        if isinstance(nodes, int):
            nodes = node_ids(nodes)
        self.nodes = list(nodes)
        self.size = len(self.nodes)
        self._order = {n: i for i, n in enumerate(self.nodes)}
        self.free = set(self.nodes)
        self._heap = list(range(self.size))   # free node indices; lowest is handed out first
        self.dead = set()
        self.reservations = {}
        self._lock = threading.Lock()

    @property
    def live(self):
        return self.size - len(self.dead)

    def allocate(self, task, width):
        """Reserve ``width`` free nodes for ``task``; None means try again later."""
        if width < 1:
            raise ConfigError(f"task width must be >= 1, got {width}")
        if width > self.size:
            raise ConfigError(f"task {task} needs {width} nodes but the pool has {self.size}")
        with self._lock:
            if len(self.free) < width:
                return None
            chosen = []
            while len(chosen) < width:
                n = self.nodes[heapq.heappop(self._heap)]
                if n in self.free:
                    chosen.append(n)
            self.free.difference_update(chosen)
            self.reservations[task] = chosen
            return chosen

    def release(self, task):
        with self._lock:
            nodes = self.reservations.pop(task, ())
            for n in nodes:
                if n not in self.dead:
                    self.free.add(n)
                    heapq.heappush(self._heap, self._order[n])
            return nodes

    def remove(self, node):
        """Take ``node`` out of service; returns tasks holding a reservation on it."""
        with self._lock:
            if node not in self._order:
                raise UnknownNode(node)
            if node in self.dead:
                return []
            self.dead.add(node)
            self.free.discard(node)
            return sorted(t for t, ns in self.reservations.items() if node in ns)

    def holders(self, task):
        return self.reservations.get(task, ())


def allocate(pool: WorkerPool, task, width):
    return pool.allocate(task, width)


@dataclass(frozen=True)
class RetryPolicy:
    max_retries: int = 3
    backoff: float = 0.0


class Action(NamedTuple):
    kind: str        # "retry" | "fail"
    task: str
    attempt: int


def _graph_of(graphs, task):
    if isinstance(graphs, DataflowGraph):
        return graphs
    for g in graphs:
        if task in g.tasks:
            return g
    raise KeyError(task)


def handle_failure(pool: WorkerPool, graphs, node, policy: RetryPolicy):
    """Remove ``node`` and revert or fail the tasks that were running on it."""
    actions = []
    for tid in pool.remove(node):
        pool.release(tid)
        g = _graph_of(graphs, tid)
        actions.append(settle_failure(g, tid, policy))
    return actions


def settle_failure(g: DataflowGraph, tid, policy: RetryPolicy):
    t = g.tasks[tid]
    if t.retries < policy.max_retries:
        g.requeue(tid)
        return Action("retry", tid, t.attempt)
    g.fail_task(tid)
    return Action("fail", tid, t.attempt)


class ShardPlan:
    """Task ownership by ``hash(task-id) mod S`` plus consumer routing for futures."""

    def __init__(self, graph: DataflowGraph, shards: int, hash_fn=fnv1a64):
        if shards < 1:
            raise ConfigError(f"shard count must be >= 1, got {shards}")
        self.shards = shards
        self.hash_fn = hash_fn
        self.owner = {tid: hash_fn(tid) % shards for tid in graph.tasks}
        self.consumer_shards = {}
        for fid, cell in graph.futures.items():
            self.consumer_shards[fid] = sorted({self.owner[c] for c in cell.consumers})

    def owner_of(self, tid):
        return self.owner[tid]

    def counts(self):
        out = [0] * self.shards
        for s in self.owner.values():
            out[s] += 1
        return out


class Message(NamedTuple):
    kind: str        # "notify" | "regen" | "regenerated" | "lost"
    dest: int
    future: str
    value: object = None


class Shard:
    """Evaluation and dispatch state for one partition of the graph."""

    def __init__(self, index, graph: DataflowGraph, plan: Optional[ShardPlan], pool: WorkerPool,
                 policy: RetryPolicy, log: EventLog):
        self.index = index
        self.graph = graph
        self.plan = plan
        self.pool = pool
        self.policy = policy
        self.log = log
        self.heap = []
        self.blocked = {}        # future -> tasks waiting for it to be regenerated
        self.regenerating = set()
        self.dispatched = 0
        self.notifications_sent = 0
        self.notifications_received = 0
        self.failures = {}

    # -- queue --

    def submit_all(self):
        for tid in sorted(self.graph.tasks, key=lambda t: self.graph.tasks[t].spec.seq):
            self.log.emit("submit", task=tid, shard=self.index)
        self.admit(sorted(self.graph.ready_tasks()))

    def admit(self, tids):
        tasks = self.graph.tasks
        for tid in tids:
            t = tasks[tid]
            self.log.emit("ready", task=tid, shard=self.index)
            heapq.heappush(self.heap, (t.depth, t.spec.seq, tid))

    def has_ready(self):
        return bool(self.heap)

    def peek(self):
        return self.heap[0][2] if self.heap else None

    def next_assignment(self, available=None):
        """Pop the head task and reserve its nodes, or return None.

        ``available`` is an optional predicate over a future's value; inputs it
        rejects are regenerated by their producers before the task may run.
        Returns ``(task-id, nodes, attempt, messages)``.
        """
        while self.heap:
            _, _, tid = self.heap[0]
            t = self.graph.tasks[tid]
            if t.status != READY:
                heapq.heappop(self.heap)
                continue
            if available is not None:
                lost = [f for f in t.spec.inputs if not available(self.graph.futures[f].value)]
                if lost:
                    heapq.heappop(self.heap)
                    msgs = self._request_regen(tid, lost)
                    if msgs:
                        return None, None, None, msgs
                    continue
            nodes = self.pool.allocate(tid, t.spec.width)
            if nodes is None:
                return None
            heapq.heappop(self.heap)
            attempt = self.graph.start(tid)
            self.log.emit("alloc", task=tid, node=",".join(nodes), shard=self.index, attempt=attempt)
            self.dispatched += 1
            return tid, nodes, attempt, ()
        return None

    def mark_started(self, tid, nodes, attempt):
        self.log.emit("start", task=tid, node=",".join(nodes), shard=self.index, attempt=attempt)

    # -- completion --

    def complete(self, tid, outs, attempt):
        """Record a successful execution; returns messages for other shards."""
        g = self.graph
        t = g.tasks[tid]
        nodes = self.pool.release(tid)
        node = ",".join(nodes)
        if tid in self.regenerating:
            self.regenerating.discard(tid)
            g.finish_regeneration(tid, outs)
            self.log.emit("complete", task=tid, node=node, shard=self.index, attempt=attempt)
            msgs = []
            for fid in t.spec.outputs:
                g.futures[fid].value = outs[fid]
                msgs.extend(self._route("regenerated", fid, outs[fid]))
            return msgs
        ready = g.complete_task(tid, outs)
        self.log.emit("complete", task=tid, node=node, shard=self.index, attempt=attempt)
        msgs = []
        for fid in t.spec.outputs:
            value = outs[fid]
            self.log.emit("future-set", task=tid, node=node, shard=self.index, attempt=attempt,
                          bytes=getattr(value, "size", None), artifact=fid)
            msgs.extend(self._route("notify", fid, value, skip_self=True))
        self.admit(ready)
        return msgs

    def _route(self, kind, fid, value, skip_self=False):
        if self.plan is None:
            return [] if skip_self else [Message(kind, self.index, fid, value)]
        out = []
        for s in self.plan.consumer_shards.get(fid, ()):
            if skip_self and s == self.index:
                continue
            out.append(Message(kind, s, fid, value))
        if kind == "notify":
            self.notifications_sent += len(out)
        return out

    def task_failed(self, tid, attempt, reason=""):
        """A task's process failed; retry it under the policy or mark it failed."""
        self.pool.release(tid)
        self.failures[tid] = reason
        return self.apply_action(settle_failure(self.graph, tid, self.policy))

    def apply_action(self, action: Action):
        t = self.graph.tasks[action.task]
        if action.kind == "retry":
            self.log.emit("retry", task=action.task, shard=self.index, attempt=action.attempt)
            self.admit([action.task])
        else:
            self.log.emit("fail", task=action.task, shard=self.index, attempt=action.attempt)
            if action.task in self.regenerating:
                self.regenerating.discard(action.task)
                return [m for fid in t.spec.outputs for m in self._route("lost", fid, None)]
        return []

    # -- messages --

    def receive(self, msg: Message):
        g = self.graph
        if msg.kind == "notify":
            self.notifications_received += 1
            self.admit(g.set_future(msg.future, msg.value))
            return []
        if msg.kind == "regen":
            return self._regenerate(msg.future)
        if msg.kind == "regenerated":
            g.futures[msg.future].value = msg.value
            waiting = self.blocked.pop(msg.future, [])
            self.admit(sorted(set(waiting), key=lambda t: g.tasks[t].spec.seq))
            return []
        if msg.kind == "lost":
            for tid in self.blocked.pop(msg.future, []):
                t = g.tasks[tid]
                if t.status == READY:
                    t.status = "pending"
            return []
        raise ValueError(msg.kind)

    def _request_regen(self, tid, lost):
        msgs = []
        for fid in lost:
            waiting = self.blocked.setdefault(fid, [])
            first = not waiting
            waiting.append(tid)
            if first:
                producer = self.graph.futures[fid].producer
                dest = self.index if self.plan is None else self.plan.owner_of(producer)
                msgs.append(Message("regen", dest, fid))
        return msgs

    def _regenerate(self, fid):
        producer = self.graph.futures[fid].producer
        t = self.graph.tasks[producer]
        if producer in self.regenerating:
            return []
        if t.status == DONE:
            self.graph.reopen(producer)
            self.regenerating.add(producer)
            t.retries += 1
            self.log.emit("retry", task=producer, shard=self.index, attempt=t.attempt)
            self.admit([producer])
            return []
        if t.status == FAILED:
            return list(self._route("lost", fid, None))
        return []


@dataclass
class RunResult:
    status: object
    log: EventLog
    graph: DataflowGraph
    metrics: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)
    store: object = None

    @property
    def events(self):
        return self.log.events

    @property
    def ok(self):
        return bool(self.status)

    def values(self):
        return self.graph.values()

    def digests(self, persistent_only=False):
        out = {}
        for fid, c in self.graph.futures.items():
            if c.is_set and c.producer is not None and (not persistent_only or c.persistence == "persistent"):
                out[fid] = getattr(c.value, "digest", None)
        return out


def build_shards(g: DataflowGraph, pool: WorkerPool, policy: RetryPolicy, log: EventLog, shards=None,
                 hash_fn=fnv1a64):
    """One shard over ``g`` when ``shards`` is None (central), else a hash partition."""
    if g.max_width() > pool.size:
        widest = max(g.tasks.values(), key=lambda t: t.spec.width)
        raise ConfigError(f"task {widest.id} needs {widest.spec.width} nodes but the pool has {pool.size}")
    if shards is None:
        return None, [Shard(0, g, None, pool, policy, log)]
    plan = ShardPlan(g, shards, hash_fn)
    parts = g.partition(plan.owner, shards)
    return plan, [Shard(i, part, plan, pool, policy, log) for i, part in enumerate(parts)]


def _default_executor(pool):
    from .simcluster import ClusterConfig, Simulator

    return Simulator(ClusterConfig(node_count=pool.size, dispatch_latency_ms=0.0))


def dispatch_central(g: DataflowGraph, pool: WorkerPool, policy: RetryPolicy = RetryPolicy(),
                     executor=None) -> RunResult:
    """Drive ``g`` to quiescence with one coordinator."""
    executor = executor or _default_executor(pool)
    return executor.execute(g, pool, policy, shards=None)


def dispatch_sharded(g: DataflowGraph, pool: WorkerPool, shards: int, policy: RetryPolicy = RetryPolicy(),
                     executor=None, hash_fn=fnv1a64) -> RunResult:
    """Drive ``g`` with ``shards`` coordinators that exchange future-set notifications."""
    if shards < 1:
        raise ConfigError(f"shard count must be >= 1, got {shards}")
    executor = executor or _default_executor(pool)
    return executor.execute(g, pool, policy, shards=shards, hash_fn=hash_fn)
