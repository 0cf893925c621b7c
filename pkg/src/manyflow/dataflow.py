"""Single-assignment futures, task nodes, and readiness tracking."""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

from .datastore.store import SHARED, ArtifactRef
from .dsl import ast as A
from .dsl.evaluate import EvalError, evaluate, range_values
from .dsl.lower import CallSite, DataflowProgram, FileDecl, LoopSite, ScalarDef
from .errors import CycleError, DoubleAssignError, ManyflowError, UnboundInputError, UnknownTask

PENDING, READY, RUNNING, DONE, FAILED = "pending", "ready", "running", "done", "failed"


class FileArg(NamedTuple):
    """A command word that stands for a file future."""

    future: str
    direction: str
    param: str
    position: int = 0


@dataclass
class FutureCell:
    id: str
    kind: str = "file"
    value: object = None
    is_set: bool = False
    producer: Optional[str] = None
    consumers: list = field(default_factory=list)
    mapping: Optional[str] = None
    persistence: str = "volatile"
    param: Optional[str] = None

    @property
    def state(self):
        return "set" if self.is_set else "unset"


@dataclass(frozen=True)
class TaskSpec:
    id: str
    app: str
    command: tuple
    inputs: tuple
    outputs: tuple
    out_params: tuple
    width: int = 1
    persistence: str = "volatile"
    sim_duration: Optional[float] = None
    seq: int = 0
    site: int = 0
    arrays: tuple = ()
    span: Optional[A.Span] = field(default=None, compare=False)


@dataclass
class TaskNode:
    spec: TaskSpec
    status: str = PENDING
    missing: int = 0
    depth: int = 0
    retries: int = 0
    attempt: int = 0

    @property
    def id(self):
        return self.spec.id


class Quiescent:
    def __repr__(self):
        return "Quiescent"

    def __bool__(self):
        return True


QUIESCENT = Quiescent()


@dataclass
class Deadlocked:
    unset: dict      # future-id -> producer task-id (None if no producer)
    failed: list     # failed task ids

    def __bool__(self):
        return False


class DataflowGraph:
    def __init__(self):
        self.futures = {}
        self.tasks = {}
        self.run_id = None
        self._lock = threading.RLock()

    # -- queries --

    def ready_tasks(self):
        with self._lock:
            return {tid for tid, t in self.tasks.items() if t.status == READY}

    def status(self, tid):
        return self._task(tid).status

    def spec(self, tid) -> TaskSpec:
        return self._task(tid).spec

    def _task(self, tid) -> TaskNode:
        try:
            return self.tasks[tid]
        except KeyError:
            raise UnknownTask(tid) from None

    def order_key(self, tid):
        t = self.tasks[tid]
        return (t.depth, t.spec.seq)

    def values(self):
        with self._lock:
            return {fid: c.value for fid, c in self.futures.items() if c.is_set}

    def max_width(self):
        return max((t.spec.width for t in self.tasks.values()), default=1)

    def counts(self):
        out = {}
        for t in self.tasks.values():
            out[t.status] = out.get(t.status, 0) + 1
        return out

    # -- transitions --

    def _inputs_changed(self, fid):
        ready = []
        for tid in self.futures[fid].consumers:
            t = self.tasks.get(tid)
            if t is None:
                continue
            t.missing -= 1
            if t.missing == 0 and t.status == PENDING:
                t.status = READY
                ready.append(tid)
        return ready

    def set_future(self, fid, value):
        """Bind an unset future from outside the graph; returns newly ready task ids."""
        with self._lock:
            cell = self.futures[fid]
            if cell.is_set:
                raise DoubleAssignError(fid)
            cell.value = value
            cell.is_set = True
            return self._inputs_changed(fid)

    def start(self, tid) -> int:
        with self._lock:
            t = self._task(tid)
            if t.status != READY:
                raise ManyflowError(f"cannot start {tid}: status is {t.status}")
            t.status = RUNNING
            t.attempt += 1
            return t.attempt

    def complete_task(self, tid, outs):
        """Set ``tid``'s outputs and mark it done; returns the tasks that became ready."""
        with self._lock:
            t = self._task(tid)
            for fid in t.spec.outputs:
                if self.futures[fid].is_set:
                    raise DoubleAssignError(fid, f"task {tid} completed again")
            if set(outs) != set(t.spec.outputs):
                raise ManyflowError(f"{tid}: outputs {sorted(outs)} do not match {list(t.spec.outputs)}")
            if t.status != RUNNING:
                raise ManyflowError(f"cannot complete {tid}: status is {t.status}")
            t.status = DONE
            ready = []
            for fid in t.spec.outputs:
                cell = self.futures[fid]
                cell.value = outs[fid]
                cell.is_set = True
                ready.extend(self._inputs_changed(fid))
            return ready

    def fail_task(self, tid):
        with self._lock:
            t = self._task(tid)
            t.status = FAILED

    def requeue(self, tid):
        """Running task lost its execution; make it ready again."""
        with self._lock:
            t = self._task(tid)
            if t.status != RUNNING:
                raise ManyflowError(f"cannot requeue {tid}: status is {t.status}")
            t.status = READY
            t.retries += 1

    def reopen(self, tid):
        """Schedule a done task again to regenerate lost outputs."""
        with self._lock:
            t = self._task(tid)
            if t.status != DONE:
                return False
            t.status = READY
            return True

    def finish_regeneration(self, tid, outs):
        with self._lock:
            t = self._task(tid)
            for fid in t.spec.outputs:
                old = self.futures[fid].value
                new = outs[fid]
                if old is not None and getattr(old, "digest", None) != getattr(new, "digest", None):
                    from .errors import DeterminismError

                    raise DeterminismError(f"{tid} regenerated {fid} with different content")
            t.status = DONE

    # -- termination --

    def check_quiescence(self):
        with self._lock:
            active = [tid for tid, t in self.tasks.items() if t.status in (READY, RUNNING)]
            if active:
                raise ManyflowError(f"graph is not quiescent: {len(active)} task(s) ready or running")
            unset = {fid: c.producer for fid, c in self.futures.items() if not c.is_set}
            if not unset and all(t.status == DONE for t in self.tasks.values()):
                return QUIESCENT
            failed = sorted(tid for tid, t in self.tasks.items() if t.status == FAILED)
            return Deadlocked(unset, failed)

    def outcome(self):
        """Like :meth:`check_quiescence`, but tasks stranded ready or running count as stuck."""
        with self._lock:
            unset = {fid: c.producer for fid, c in self.futures.items() if not c.is_set}
            if not unset and all(t.status == DONE for t in self.tasks.values()):
                return QUIESCENT
            failed = sorted(tid for tid, t in self.tasks.items() if t.status == FAILED)
            return Deadlocked(unset, failed)

    def is_active(self):
        return any(t.status in (READY, RUNNING) for t in self.tasks.values())

    # -- structure --

    def partition(self, owner, shards):
        """Split into per-shard graphs; cross-shard futures appear in both sides."""
        parts = [DataflowGraph() for _ in range(shards)]
        for p in parts:
            p.run_id = self.run_id
        for tid, t in self.tasks.items():
            g = parts[owner[tid]]
            g.tasks[tid] = TaskNode(t.spec, t.status, t.missing, t.depth, t.retries, t.attempt)
            for fid in t.spec.inputs + t.spec.outputs:
                if fid not in g.futures:
                    c = self.futures[fid]
                    g.futures[fid] = FutureCell(c.id, c.kind, c.value, c.is_set, c.producer, [],
                                                c.mapping, c.persistence, c.param)
        for g in parts:
            for tid, t in g.tasks.items():
                for fid in t.spec.inputs:
                    g.futures[fid].consumers.append(tid)
        return parts

    def absorb(self, parts):
        """Copy task status and future values back from shard graphs."""
        for g in parts:
            for tid, t in g.tasks.items():
                mine = self.tasks[tid]
                mine.status, mine.retries, mine.attempt = t.status, t.retries, t.attempt
            for fid, c in g.futures.items():
                if c.is_set:
                    mine = self.futures[fid]
                    mine.value, mine.is_set = c.value, True

    def to_dot(self) -> str:
        def q(s):
            return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'

        lines = ["digraph dataflow {", "  rankdir=LR;"]
        tasks = sorted(self.tasks.values(), key=lambda t: t.spec.seq)
        for t in tasks:
            lines.append(f"  {q(t.id)} [shape=box, label={q(t.id)}];")
        for fid, c in self.futures.items():
            lines.append(f"  {q(fid)} [shape=ellipse{', style=dashed' if c.persistence == 'volatile' else ''}];")
        for t in tasks:
            for fid in t.spec.inputs:
                style = " [style=dashed]" if self.futures[fid].persistence == "volatile" else ""
                lines.append(f"  {q(fid)} -> {q(t.id)}{style};")
            for fid in t.spec.outputs:
                style = " [style=dashed]" if self.futures[fid].persistence == "volatile" else ""
                lines.append(f"  {q(t.id)} -> {q(fid)}{style};")
        lines.append("}")
        return "\n".join(lines) + "\n"


# -- instantiation -------------------------------------------------------------

class _FileVar(NamedTuple):
    key: str
    dims: int
    mapping: Optional[str]


class _Call(NamedTuple):
    site: CallSite
    outs: tuple
    args: tuple          # per in-param: ("file", fid) | ("array", key, prefix) | ("value", str)
    duration: Optional[float]
    width: int


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


class _Expander:
    def __init__(self, prog: DataflowProgram, persist_all):
        self.prog = prog
        self.persist_all = persist_all
        self.calls = []
        self.cells = {}
        self.producer = {}
        self.elements = {}   # array key -> set of index tuples

    def cell(self, fid, var: _FileVar, index=()):
        c = self.cells.get(fid)
        if c is None:
            mapping = None
            if var.mapping is not None:
                mapping = var.mapping.replace("{}", "_".join(str(i) for i in index)) if var.dims else var.mapping
            persistence = "persistent" if (mapping is not None or self.persist_all) else "volatile"
            c = FutureCell(fid, mapping=mapping, persistence=persistence)
            self.cells[fid] = c
        return c

    def lvalue(self, e, env, files):
        indices = []
        while isinstance(e, A.Index):
            v = evaluate(e.index, env)
            if not isinstance(v, int):
                raise EvalError(f"array index must be an int, got {v!r}", e.span)
            indices.append(v)
            e = e.base
        var = files[e.id]
        indices.reverse()
        return var, tuple(indices)

    def file_ref(self, e, env, files):
        var, idx = self.lvalue(e, env, files)
        fid = var.key + "".join(f"[{i}]" for i in idx)
        return var, idx, fid

    def run(self, body, env, files, path):
        for s in body:
            t = type(s)
            if t is CallSite:
                self.call(s, env, files)
            elif t is FileDecl:
                key = s.name if not path else f"{s.name}@{path}"
                files[s.name] = _FileVar(key, s.ty.dims, s.mapping)
            elif t is ScalarDef:
                if s.value is not None:
                    v = evaluate(s.value, env)
                    if s.ty is not None and s.ty.base == "float" and isinstance(v, int):
                        v = float(v)
                    env[s.name] = v
            elif t is LoopSite:
                values = range_values(s.over, env)
                for i, v in enumerate(values):
                    inner = dict(env)
                    inner[s.var] = v
                    if s.index:
                        inner[s.index] = i
                    self.run(s.body, inner, dict(files), f"{path},{i}" if path else str(i))

    def call(self, site: CallSite, env, files):
        outs = []
        for lv, p in zip(site.outs, site.out_params):
            var, idx, fid = self.file_ref(lv, env, files)
            self.cell(fid, var, idx)
            if fid in self.producer:
                first = self.calls[self.producer[fid]].site
                raise DoubleAssignError(fid, f"written at {first.span} and {site.span}")
            self.producer[fid] = len(self.calls)
            if var.dims:
                self.elements.setdefault(var.key, set()).add(idx)
            outs.append(fid)
        args = []
        for e, p in zip(site.args, site.in_params):
            if p.ty.is_file and p.ty.dims == 0:
                var, idx, fid = self.file_ref(e, env, files)
                self.cell(fid, var, idx)
                args.append(("file", fid, var, idx))
            elif p.ty.is_file:
                var, idx = self.lvalue(e, env, files)
                args.append(("array", var, idx))
            else:
                args.append(("value", _fmt(evaluate(e, env))))
        duration = float(evaluate(site.duration, env)) if site.duration is not None else None
        width = int(evaluate(site.width, env)) if site.width is not None else 1
        self.calls.append(_Call(site, tuple(outs), tuple(args), duration, width))


def instantiate(prog: DataflowProgram, bindings=None, *, persist_all=False, allow_unbound=False,
                run_id=None) -> DataflowGraph:
    """Expand every loop of ``prog`` into tasks and futures.

    ``bindings`` maps future ids (variable names such as ``"init"`` or
    ``"xs[3]"``) to :class:`ArtifactRef` values for external inputs.  Mapped
    input files that are never produced are bound to their mapping path.
    """
    bindings = dict(bindings or {})
    ex = _Expander(prog, persist_all)
    try:
        ex.run(prog.body, {}, {}, "")
    except EvalError as e:
        raise ManyflowError(f"{e.span}: {e}") from None

    for fid in bindings:
        if "[" in fid:
            key, rest = fid.split("[", 1)
            idx = tuple(int(x) for x in rest.rstrip("]").split("]["))
            ex.elements.setdefault(key, set()).add(idx)

    g = DataflowGraph()
    g.run_id = run_id
    n = len(ex.calls)
    width = max(5, len(str(n)))
    for seq, call in enumerate(ex.calls):
        tid = f"t{seq:0{width}d}-{call.site.app}"
        for fid in call.outs:
            ex.producer[fid] = tid
        inputs, command = [], []
        resolved = {}
        for p, arg in zip(call.site.in_params, call.args):
            kind = arg[0]
            if kind == "file":
                fid = arg[1]
                resolved[p.name] = [FileArg(fid, "in", p.name)]
                inputs.append(fid)
            elif kind == "array":
                var, prefix = arg[1], arg[2]
                elems = sorted(i for i in ex.elements.get(var.key, ()) if i[:len(prefix)] == prefix
                               and len(i) == var.dims)
                words = []
                for k, idx in enumerate(elems):
                    fid = var.key + "".join(f"[{i}]" for i in idx)
                    ex.cell(fid, var, idx)
                    words.append(FileArg(fid, "in", p.name, k))
                    inputs.append(fid)
                resolved[p.name] = words
            else:
                resolved[p.name] = [arg[1]]
        for p, fid in zip(call.site.out_params, call.outs):
            resolved[p.name] = [FileArg(fid, "out", p.name)]
        for w in call.site.template:
            if w.literal is not None:
                command.append(w.literal)
            else:
                command.extend(resolved[w.param])
        inputs = tuple(dict.fromkeys(inputs))
        persistent = all(ex.cells[f].persistence == "persistent" for f in call.outs)
        spec = TaskSpec(
            id=tid, app=call.site.app, command=tuple(command), inputs=inputs,
            outputs=call.outs, out_params=tuple(p.name for p in call.site.out_params),
            width=call.width, persistence="persistent" if persistent else "volatile",
            sim_duration=call.duration, seq=seq, site=call.site.site,
            arrays=tuple(p.name for p in call.site.in_params if p.ty.is_file and p.ty.dims),
            span=call.site.span,
        )
        g.tasks[tid] = TaskNode(spec, missing=len(inputs))
        for fid in inputs:
            ex.cells[fid].consumers.append(tid)

    for fid, cell in ex.cells.items():
        cell.producer = ex.producer.get(fid)
    g.futures = ex.cells

    names = {}
    for fid, cell in g.futures.items():
        if cell.producer is not None and cell.mapping is not None:
            if cell.mapping in names:
                raise DoubleAssignError(fid, f"artifact {cell.mapping!r} also produced for {names[cell.mapping]}")
            names[cell.mapping] = fid

    unbound = []
    for fid, cell in g.futures.items():
        if cell.producer is not None:
            continue
        if fid in bindings:
            cell.value, cell.is_set = bindings[fid], True
        elif cell.mapping is not None:
            cell.value = ArtifactRef(cell.mapping, persistence="persistent", locations=frozenset({SHARED}))
            cell.is_set = True
            cell.persistence = "persistent"
        elif cell.consumers:
            unbound.append(fid)
    if unbound and not allow_unbound:
        raise UnboundInputError(unbound)

    _order(g)
    for t in g.tasks.values():
        t.missing = sum(1 for fid in t.spec.inputs if not g.futures[fid].is_set)
        if t.missing == 0:
            t.status = READY
    return g


def _order(g: DataflowGraph):
    """Assign topological depths; raise CycleError naming one cycle."""
    indeg = {}
    for tid, t in g.tasks.items():
        indeg[tid] = sum(1 for fid in t.spec.inputs if g.futures[fid].producer is not None)
    queue = deque(sorted((tid for tid, d in indeg.items() if d == 0), key=lambda x: g.tasks[x].spec.seq))
    seen = 0
    while queue:
        tid = queue.popleft()
        seen += 1
        t = g.tasks[tid]
        for fid in t.spec.outputs:
            for consumer in g.futures[fid].consumers:
                c = g.tasks[consumer]
                if c.depth < t.depth + 1:
                    c.depth = t.depth + 1
                indeg[consumer] -= 1
                if indeg[consumer] == 0:
                    queue.append(consumer)
    if seen != len(g.tasks):
        raise CycleError(_find_cycle(g, {tid for tid, d in indeg.items() if d > 0}))


def _find_cycle(g, remaining):
    start = min(remaining, key=lambda x: g.tasks[x].spec.seq)
    path, index = [], {}
    tid = start
    while tid not in index:
        index[tid] = len(path)
        path.append(tid)
        nxt = None
        for fid in g.tasks[tid].spec.inputs:
            producer = g.futures[fid].producer
            if producer in remaining:
                nxt = (fid, producer)
                break
        fid, tid = nxt
        path.append(fid)
    cycle = path[index[tid]:] + [tid]
    # path walks consumer -> producer; report producer -> consumer order
    return list(reversed(cycle))


def undetermined(g: DataflowGraph):
    """Futures that can never be set: no producer, or produced downstream of one."""
    doomed = set()
    frontier = [fid for fid, c in g.futures.items() if not c.is_set and c.producer is None]
    while frontier:
        fid = frontier.pop()
        if fid in doomed:
            continue
        doomed.add(fid)
        for tid in g.futures[fid].consumers:
            for out in g.tasks[tid].spec.outputs:
                if out not in doomed:
                    frontier.append(out)
    return doomed
