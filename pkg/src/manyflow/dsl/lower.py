"""Lowering of a type-checked program to the form the dataflow layer instantiates."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

from . import ast as A
from .evaluate import evaluate, range_values
from .typecheck import AppSig, Ty, TypedProgram


class TemplateWord(NamedTuple):
    """A literal command word, or a reference to a call parameter."""

    literal: Optional[str]
    param: Optional[str] = None
    direction: Optional[str] = None
    position: int = -1


@dataclass(frozen=True)
class FileDecl:
    name: str
    ty: Ty
    mapping: Optional[str]
    span: Optional[A.Span] = field(default=None, compare=False)


@dataclass(frozen=True)
class ScalarDef:
    name: str
    ty: Ty
    value: Optional[A.Expr]
    span: Optional[A.Span] = field(default=None, compare=False)


@dataclass(frozen=True)
class CallSite:
    site: int
    app: str
    template: tuple
    outs: tuple
    out_params: tuple
    args: tuple
    in_params: tuple
    duration: Optional[A.Expr]
    width: Optional[A.Expr]
    span: Optional[A.Span] = field(default=None, compare=False)


@dataclass(frozen=True)
class LoopSite:
    site: int
    var: str
    index: Optional[str]
    over: object
    body: tuple
    expansions: int
    span: Optional[A.Span] = field(default=None, compare=False)


@dataclass(frozen=True)
class DataflowProgram:
    apps: dict
    file_types: tuple
    body: tuple
    call_sites: tuple
    loops: tuple
    instances: int
    source_name: str = "<script>"

    def site_instances(self):
        """Number of task instances each call site expands to."""
        counts = {}
        _count(self.body, {}, 1, counts)
        return counts


def resolve_template(app: AppSig) -> tuple:
    params = {p.name: (p, i) for i, p in enumerate(app.outs)}
    params.update({p.name: (p, i) for i, p in enumerate(app.ins)})
    words = []
    for w in app.words:
        if isinstance(w, A.StrWord):
            words.append(TemplateWord(w.value))
        else:
            p, i = params[w.name]
            words.append(TemplateWord(None, p.name, p.direction, i))
    return tuple(words)


class _Lowerer:
    def __init__(self, prog: TypedProgram):
        self.prog = prog
        self.templates = {name: resolve_template(app) for name, app in prog.apps.items()}
        self.sites = []
        self.loops = []

    def block(self, stmts):
        out = []
        for s in stmts:
            out.extend(self.stmt(s))
        return tuple(out)

    def stmt(self, s):
        if isinstance(s, A.VarDecl):
            ty = Ty(s.type, s.dims)
            if ty.is_file:
                lowered = [FileDecl(s.name, ty, s.mapping, span=s.span)]
                if isinstance(s.init, A.Call):
                    lowered.append(self.call((A.Name(s.name, span=s.span),), s.init, s.annotations, s.span))
                return lowered
            return [ScalarDef(s.name, ty, s.init, span=s.span)]
        if isinstance(s, A.Assign):
            return [ScalarDef(s.target.id, None, s.value, span=s.span)]
        if isinstance(s, A.CallStmt):
            return [self.call(s.outs, s.call, s.annotations, s.span)]
        if isinstance(s, A.Foreach):
            site = len(self.loops)
            self.loops.append(None)
            body = self.block(s.body)
            loop = LoopSite(site, s.var, s.index, s.over, body, 0, span=s.span)
            self.loops[site] = loop
            return [loop]
        raise TypeError(f"cannot lower {type(s).__name__}")

    def call(self, outs, call: A.Call, annotations, span):
        app = self.prog.apps[call.app]
        duration = width = None
        for a in annotations:
            if a.name == "duration":
                duration = a.args[0]
            elif a.name == "width":
                width = a.args[0]
        site = CallSite(
            site=len(self.sites),
            app=app.name,
            template=self.templates[app.name],
            outs=tuple(outs),
            out_params=app.outs,
            args=tuple(call.args),
            in_params=app.ins,
            duration=duration,
            width=width,
            span=span,
        )
        self.sites.append(site)
        return site


def _count(body, env, multiplier, calls, loops=None):
    """Accumulate per-site expansion counts for ``body`` executed ``multiplier`` times."""
    for s in body:
        if isinstance(s, ScalarDef) and s.value is not None:
            env[s.name] = evaluate(s.value, env)
        elif isinstance(s, CallSite):
            calls[s.site] = calls.get(s.site, 0) + multiplier
        elif isinstance(s, LoopSite):
            values = range_values(s.over, env)
            if _body_needs_iteration(s.body):
                for i, v in enumerate(values):
                    inner = dict(env)
                    inner[s.var] = v
                    if s.index:
                        inner[s.index] = i
                    if loops is not None:
                        loops[s.site] = loops.get(s.site, 0) + multiplier
                    _count(s.body, inner, multiplier, calls, loops)
            else:
                if loops is not None:
                    loops[s.site] = loops.get(s.site, 0) + multiplier * len(values)
                _count(s.body, dict(env), multiplier * len(values), calls, loops)


def _body_needs_iteration(body):
    return any(isinstance(s, (LoopSite, ScalarDef)) for s in body)


def _with_expansions(body, loops):
    out = []
    for s in body:
        if isinstance(s, LoopSite):
            s = LoopSite(s.site, s.var, s.index, s.over, _with_expansions(s.body, loops),
                         loops.get(s.site, 0), span=s.span)
        out.append(s)
    return tuple(out)


def lower(prog: TypedProgram, source_name: str = "<script>") -> DataflowProgram:
    """Lower ``prog``; loops stay symbolic but carry their total expansion count."""
    lw = _Lowerer(prog)
    body = lw.block(prog.statements)
    calls, loops = {}, {}
    _count(body, {}, 1, calls, loops)
    body = _with_expansions(body, loops)
    loop_sites = []
    _collect_loops(body, loop_sites)
    return DataflowProgram(
        apps=dict(prog.apps),
        file_types=prog.file_types,
        body=body,
        call_sites=tuple(lw.sites),
        loops=tuple(sorted(loop_sites, key=lambda l: l.site)),
        instances=sum(calls.values()),
        source_name=source_name,
    )


def _collect_loops(body, sink):
    for s in body:
        if isinstance(s, LoopSite):
            sink.append(s)
            _collect_loops(s.body, sink)

