"""Run event records, JSON-lines logging, and the log safety checker."""

from __future__ import annotations

import json
import threading
from json.encoder import encode_basestring
from dataclasses import dataclass
from typing import Optional

KINDS = ("submit", "ready", "alloc", "start", "complete", "fail", "retry", "xfer", "future-set")
FIELDS = ("ts", "kind", "task", "node", "shard", "attempt", "bytes", "artifact")


def _str(v):
    return "null" if v is None else encode_basestring(v)


def _num(v):
    # repr of a finite float or an int is already valid JSON
    return "null" if v is None else repr(v)


@dataclass(slots=True)
class RunEvent:
    ts: float
    kind: str
    task: Optional[str] = None
    node: Optional[str] = None
    shard: Optional[int] = None
    attempt: Optional[int] = None
    bytes: Optional[int] = None
    artifact: Optional[str] = None

    def to_dict(self):
        return {"ts": self.ts, "kind": self.kind, "task": self.task, "node": self.node,
                "shard": self.shard, "attempt": self.attempt, "bytes": self.bytes,
                "artifact": self.artifact}

    def to_json(self):
        # hand-rolled for speed; equivalent to json.dumps(to_dict(), separators=(",", ":"))
        return (f'{{"ts":{_num(self.ts)},"kind":{_str(self.kind)},"task":{_str(self.task)},'
                f'"node":{_str(self.node)},"shard":{_num(self.shard)},"attempt":{_num(self.attempt)},'
                f'"bytes":{_num(self.bytes)},"artifact":{_str(self.artifact)}}}')

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d.get(k) for k in FIELDS})

    def nodes(self):
        if not self.node:
            return []
        return self.node.split(",")


class EventLog:
    """Append-only event list with an optional JSON-lines sink.

    Without a ``clock`` the owner advances ``now`` (simulated time).  With one,
    each event is stamped under a lock so timestamps never decrease across
    threads.
    """

    def __init__(self, sink=None, keep=True, clock=None):
        self.events = []
        self.now = 0.0
        self._sink = sink
        self._keep = keep
        self._clock = clock
        self._lock = threading.Lock() if clock is not None else None

    def emit(self, kind, task=None, node=None, shard=None, attempt=None, bytes=None, artifact=None, ts=None):
        if self._lock is None:
            ev = RunEvent(self.now if ts is None else ts, kind, task, node, shard, attempt, bytes, artifact)
            self._append(ev)
            return ev
        with self._lock:
            ev = RunEvent(round(self._clock(), 6), kind, task, node, shard, attempt, bytes, artifact)
            self._append(ev)
            return ev

    def _append(self, ev):
        if self._keep:
            self.events.append(ev)
        if self._sink is not None:
            self._sink.write(ev.to_json() + "\n")

    def flush(self):
        if self._sink is not None:
            if self._lock is None:
                self._sink.flush()
            else:
                with self._lock:
                    self._sink.flush()

    def __iter__(self):
        return iter(self.events)

    def __len__(self):
        return len(self.events)

    def of_kind(self, kind):
        return [e for e in self.events if e.kind == kind]

    def dump(self, path):
        with open(path, "w") as f:
            for ev in self.events:
                f.write(ev.to_json() + "\n")


def read_log(path):
    out = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(RunEvent.from_dict(json.loads(line)))
    return out


@dataclass
class Violation:
    index: int
    rule: str
    detail: str

    def __str__(self):
        return f"event {self.index}: {self.rule}: {self.detail}"


def check_log(events, graph, node_count, prebound=None, require_finished=True):
    """Replay ``events`` against ``graph`` and return every safety violation found.

    Checks that each start follows the future-set of all its task's inputs
    (or the input was bound before the run), that the summed width of running
    tasks never exceeds the live node count at any timestamp, that no node is
    held by two tasks at once, that each future is set at most once, and (with
    ``require_finished``) that every task ends done or failed.  ``prebound``
    adds futures that were already set when the log began, as after a resume.
    """
    violations = []
    is_set = {fid for fid, c in graph.futures.items() if c.producer is None}
    is_set.update(prebound or ())
    live = node_count
    running = {}        # task -> width
    held = {}           # node -> task
    reserved = {}       # task -> nodes
    set_count = {}
    finished = {}
    last_ts = None

    def release(task):
        for n in reserved.pop(task, ()):
            if held.get(n) == task:
                del held[n]
        running.pop(task, None)

    def check_capacity(i):
        used = sum(running.values())
        if used > live:
            violations.append(Violation(i, "capacity", f"{used} node(s) busy with {live} live at ts={last_ts}"))

    for i, ev in enumerate(events):
        if last_ts is not None and ev.ts != last_ts:
            check_capacity(i - 1)
        if last_ts is not None and ev.ts < last_ts:
            violations.append(Violation(i, "time", f"timestamp went back from {last_ts} to {ev.ts}"))
        last_ts = ev.ts
        k = ev.kind
        if k == "alloc":
            nodes = ev.nodes()
            for n in nodes:
                if n in held:
                    violations.append(Violation(i, "exclusive", f"{n} held by {held[n]} and {ev.task}"))
                held[n] = ev.task
            reserved[ev.task] = nodes
        elif k == "start":
            t = graph.tasks.get(ev.task)
            if t is None:
                violations.append(Violation(i, "unknown", f"start of unknown task {ev.task}"))
                continue
            missing = [f for f in t.spec.inputs if f not in is_set]
            if missing:
                violations.append(Violation(i, "order", f"{ev.task} started before {missing[0]} was set"))
            running[ev.task] = t.spec.width
        elif k == "complete":
            release(ev.task)
            finished[ev.task] = "done"
        elif k == "retry":
            release(ev.task)
            finished.pop(ev.task, None)
        elif k == "fail":
            if ev.task is None:
                live -= 1
            else:
                release(ev.task)
                finished[ev.task] = "failed"
        elif k == "future-set":
            set_count[ev.artifact] = set_count.get(ev.artifact, 0) + 1
            if set_count[ev.artifact] > 1:
                violations.append(Violation(i, "single-assignment", f"{ev.artifact} set twice"))
            is_set.add(ev.artifact)
    if last_ts is not None:
        check_capacity(len(events) - 1)
    if require_finished:
        for tid in sorted(set(graph.tasks) - set(finished)):
            violations.append(Violation(len(events), "lost", f"{tid} never finished"))
    return violations


def lost_tasks(events, graph):
    """Tasks that never reached done or failed according to ``events``."""
    final = {}
    for ev in events:
        if ev.task is None:
            continue
        if ev.kind == "complete":
            final[ev.task] = "done"
        elif ev.kind == "fail":
            final[ev.task] = "failed"
        elif ev.kind == "retry":
            final.pop(ev.task, None)
    return sorted(set(graph.tasks) - set(final))
