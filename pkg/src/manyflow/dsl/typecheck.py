"""Name resolution and type checking.

Error kinds reported in :class:`TypeErrors`:

``unknown-identifier``, ``arity``, ``direction``, ``type-mismatch``,
``double-assignment``, ``redeclaration``, ``unassigned``, ``annotation``,
``static-eval``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional

from . import ast as A
from .diagnostics import Diagnostic, TypeErrors
from .evaluate import EvalError, evaluate, needs_iteration, range_values

SCALARS = ("int", "float", "string")
ANNOTATIONS = {"duration": 1, "width": 1}


class Ty(NamedTuple):
    base: str
    dims: int = 0

    @property
    def is_file(self):
        return self.base not in SCALARS

    def __str__(self):
        return self.base + "[]" * self.dims


INT = Ty("int")
FLOAT = Ty("float")
STRING = Ty("string")


class ParamSig(NamedTuple):
    name: str
    ty: Ty
    direction: str  # "in" | "out"


@dataclass(frozen=True)
class AppSig:
    name: str
    outs: tuple
    ins: tuple
    words: tuple
    span: Optional[A.Span] = field(default=None, compare=False)

    def param(self, name):
        for p in self.outs + self.ins:
            if p.name == name:
                return p
        return None


@dataclass
class VarInfo:
    name: str
    ty: Ty
    mapping: Optional[str] = None
    loop_depth: int = 0
    assigned: bool = False
    loop_var: bool = False
    decl: object = None


@dataclass
class TypedProgram:
    ast: A.Program
    apps: dict
    file_types: tuple
    variables: dict
    statements: tuple


class _Scope:
    def __init__(self, parent=None, loop_depth=0):
        self.parent = parent
        self.vars = {}
        self.loop_depth = loop_depth

    def lookup(self, name):
        s = self
        while s is not None:
            if name in s.vars:
                return s.vars[name]
            s = s.parent
        return None


class Checker:
    def __init__(self):
        self.errors = []
        self.apps = {}
        self.file_types = []

    def error(self, node, kind, message):
        span = getattr(node, "span", None) or A.Span(1, 1)
        self.errors.append(Diagnostic(span, message, kind))

    # -- declarations --

    def type_of(self, name, node, dims=0):
        if name in SCALARS or name in self.file_types:
            return Ty(name, dims)
        self.error(node, "unknown-identifier", f"unknown type {name!r}")
        return None

    def check_program(self, prog: A.Program):
        top = _Scope()
        statements = []
        for item in prog.items:
            if isinstance(item, A.TypeDecl):
                if item.name in SCALARS or item.name in self.file_types:
                    self.error(item, "redeclaration", f"type {item.name!r} is already declared")
                else:
                    self.file_types.append(item.name)
            elif isinstance(item, A.AppDecl):
                self.check_app(item)
            else:
                statements.append(item)
                self.check_stmt(item, top)
        variables = {name: v for name, v in top.vars.items()}
        return TypedProgram(prog, dict(self.apps), tuple(self.file_types), variables, tuple(statements))

    def check_app(self, app: A.AppDecl):
        if app.name in self.apps:
            self.error(app, "redeclaration", f"app {app.name!r} is already declared")
            return
        seen = set()
        outs, ins = [], []
        for direction, params, sink in (("out", app.outs, outs), ("in", app.ins, ins)):
            for p in params:
                if p.name in seen:
                    self.error(p, "redeclaration", f"parameter {p.name!r} declared twice in app {app.name!r}")
                seen.add(p.name)
                ty = self.type_of(p.type, p, p.dims)
                if ty is None:
                    continue
                if direction == "out" and (not ty.is_file or ty.dims):
                    self.error(p, "direction", f"output parameter {p.name!r} of {app.name!r} must be a single file")
                if direction == "in" and ty.dims and not ty.is_file:
                    self.error(p, "type-mismatch", f"parameter {p.name!r}: arrays of scalars are not supported")
                if direction == "in" and ty.dims > 1:
                    self.error(p, "type-mismatch", f"parameter {p.name!r}: only one-dimensional file arrays may be passed")
                sink.append(ParamSig(p.name, ty, direction))
        for w in app.words:
            if isinstance(w, A.RefWord) and w.name not in seen:
                self.error(w, "unknown-identifier", f"command of {app.name!r} references unknown parameter {w.name!r}")
        self.apps[app.name] = AppSig(app.name, tuple(outs), tuple(ins), app.words, span=app.span)

    # -- statements --

    def declare(self, scope, node, name, ty, mapping=None, loop_var=False):
        if scope.lookup(name) is not None or name in self.apps:
            self.error(node, "redeclaration", f"{name!r} is already declared")
        info = VarInfo(name, ty, mapping, scope.loop_depth, loop_var=loop_var, assigned=loop_var, decl=node)
        scope.vars[name] = info
        return info

    def check_stmt(self, s, scope):
        if isinstance(s, A.VarDecl):
            self.check_decl(s, scope)
        elif isinstance(s, A.CallStmt):
            self.check_call(s.outs, s.call, s.annotations, scope, s)
        elif isinstance(s, A.Assign):
            self.check_assign(s, scope)
        elif isinstance(s, A.Foreach):
            self.check_foreach(s, scope)
        else:
            self.error(s, "type-mismatch", f"{type(s).__name__} is only allowed at top level")

    def check_decl(self, d: A.VarDecl, scope):
        ty = self.type_of(d.type, d, d.dims)
        if ty is None:
            return
        if not ty.is_file and ty.dims:
            self.error(d, "type-mismatch", f"{d.name!r}: arrays of scalars are not supported")
        if d.mapping is not None:
            if not ty.is_file:
                self.error(d, "type-mismatch", f"{d.name!r}: only files can be mapped")
            elif ty.dims and "{}" not in d.mapping:
                self.error(d, "type-mismatch", f"{d.name!r}: array mapping needs a '{{}}' index placeholder")
        info = self.declare(scope, d, d.name, ty, d.mapping)
        if d.init is None:
            return
        if isinstance(d.init, A.Call):
            if not ty.is_file:
                self.error(d, "direction", f"{d.name!r}: apps produce files, not {ty}")
                return
            self.check_call((A.Name(d.name, span=d.span),), d.init, d.annotations, scope, d)
        else:
            if ty.is_file:
                self.error(d, "type-mismatch", f"{d.name!r}: files are produced by app calls, not expressions")
                return
            vt = self.expr_type(d.init, scope)
            if vt is not None and not _assignable(ty, vt):
                self.error(d.init, "type-mismatch", f"cannot initialise {ty} {d.name!r} with {vt}")
            info.assigned = True

    def check_assign(self, s: A.Assign, scope):
        if not isinstance(s.target, A.Name):
            self.error(s, "type-mismatch", "file array elements are produced by app calls, not expressions")
            return
        info = scope.lookup(s.target.id)
        if info is None:
            self.error(s.target, "unknown-identifier", f"unknown identifier {s.target.id!r}")
            return
        if info.ty.is_file:
            self.error(s, "type-mismatch", f"{info.name!r}: files are produced by app calls, not expressions")
            return
        vt = self.expr_type(s.value, scope)
        if vt is not None and not _assignable(info.ty, vt):
            self.error(s.value, "type-mismatch", f"cannot assign {vt} to {info.ty} {info.name!r}")
        if info.loop_var:
            self.error(s, "double-assignment", f"loop variable {info.name!r} cannot be assigned")
        elif info.assigned:
            self.error(s, "double-assignment", f"{info.name!r} is assigned more than once")
        elif info.loop_depth < scope.loop_depth:
            self.error(s, "double-assignment", f"{info.name!r} would be assigned on every loop iteration")
        info.assigned = True

    def check_foreach(self, f: A.Foreach, scope):
        if isinstance(f.over, A.RangeLit):
            elem = INT
            for bound in (f.over.lo, f.over.hi):
                bt = self.expr_type(bound, scope)
                if bt is not None and bt != INT:
                    self.error(bound, "type-mismatch", f"range bound must be int, not {bt}")
        else:
            elem = None
            for item in f.over.items:
                it = self.expr_type(item, scope)
                if it is None:
                    continue
                if it.is_file:
                    self.error(item, "type-mismatch", "foreach lists hold scalar values only")
                elif elem is None:
                    elem = it
                elif it != elem:
                    self.error(item, "type-mismatch", f"list mixes {elem} and {it}")
            elem = elem or INT
        inner = _Scope(scope, scope.loop_depth + 1)
        self.declare(inner, f, f.var, elem, loop_var=True)
        if f.index:
            self.declare(inner, f, f.index, INT, loop_var=True)
        for s in f.body:
            self.check_stmt(s, inner)

    def check_call(self, outs, call: A.Call, annotations, scope, stmt):
        app = self.apps.get(call.app)
        if app is None:
            self.error(call, "unknown-identifier", f"unknown app {call.app!r}")
            return
        for ann in annotations:
            want = ANNOTATIONS.get(ann.name)
            if want is None:
                self.error(ann, "annotation", f"unknown annotation @{ann.name}")
                continue
            if len(ann.args) != want:
                self.error(ann, "arity", f"@{ann.name} takes {want} argument")
                continue
            at = self.expr_type(ann.args[0], scope)
            if at is None:
                continue
            if ann.name == "width" and at != INT:
                self.error(ann, "type-mismatch", "@width needs an int")
            if ann.name == "duration" and at not in (INT, FLOAT):
                self.error(ann, "type-mismatch", "@duration needs a number of seconds")
        if len(outs) != len(app.outs):
            self.error(stmt, "arity", f"{app.name!r} produces {len(app.outs)} output(s), {len(outs)} bound")
        if len(call.args) != len(app.ins):
            self.error(call, "arity", f"{app.name!r} takes {len(app.ins)} argument(s), {len(call.args)} given")
        for lv, p in zip(outs, app.outs):
            self.check_output(lv, p, scope)
        for arg, p in zip(call.args, app.ins):
            at = self.expr_type(arg, scope)
            if at is None:
                continue
            if p.ty.is_file:
                if not _is_lvalue(arg):
                    self.error(arg, "type-mismatch", f"argument {p.name!r} needs a {p.ty} variable")
                elif at != p.ty:
                    self.error(arg, "type-mismatch", f"argument {p.name!r} expects {p.ty}, got {at}")
            elif not _assignable(p.ty, at):
                self.error(arg, "type-mismatch", f"argument {p.name!r} expects {p.ty}, got {at}")
        for arg in call.args:
            if _is_lvalue(arg) and arg in outs:
                self.error(arg, "direction", f"{_root(arg)!r} is both an input and an output of this call")

    def check_output(self, lv, p: ParamSig, scope):
        if not _is_lvalue(lv):
            self.error(lv, "direction", f"output {p.name!r} must be bound to a file variable")
            return
        root = _root(lv)
        info = scope.lookup(root)
        if info is None:
            self.error(lv, "unknown-identifier", f"unknown identifier {root!r}")
            return
        if info.loop_var or not info.ty.is_file:
            self.error(lv, "direction", f"output {p.name!r} cannot be written to {info.ty} {root!r}")
            return
        lt = self.expr_type(lv, scope)
        if lt is None:
            return
        if lt != p.ty:
            self.error(lv, "type-mismatch", f"output {p.name!r} is {p.ty}, target is {lt}")
            return
        if isinstance(lv, A.Name):
            if info.assigned:
                self.error(lv, "double-assignment", f"{root!r} is assigned more than once")
            elif info.loop_depth < scope.loop_depth:
                self.error(lv, "double-assignment", f"{root!r} would be assigned on every loop iteration")
            info.assigned = True

    # -- expressions --

    def expr_type(self, e, scope) -> Optional[Ty]:
        if isinstance(e, A.IntLit):
            return INT
        if isinstance(e, A.FloatLit):
            return FLOAT
        if isinstance(e, A.StrLit):
            return STRING
        if isinstance(e, A.Name):
            info = scope.lookup(e.id)
            if info is None:
                self.error(e, "unknown-identifier", f"unknown identifier {e.id!r}")
                return None
            if not info.ty.is_file and not info.assigned:
                self.error(e, "unassigned", f"{e.id!r} is used before it is assigned")
            return info.ty
        if isinstance(e, A.Index):
            bt = self.expr_type(e.base, scope)
            it = self.expr_type(e.index, scope)
            if it is not None and it != INT:
                self.error(e.index, "type-mismatch", f"array index must be int, not {it}")
            if bt is None:
                return None
            if bt.dims == 0:
                self.error(e, "type-mismatch", f"{bt} is not an array")
                return None
            return Ty(bt.base, bt.dims - 1)
        if isinstance(e, A.Neg):
            t = self.expr_type(e.operand, scope)
            if t is not None and t not in (INT, FLOAT):
                self.error(e, "type-mismatch", f"cannot negate {t}")
                return None
            return t
        if isinstance(e, A.BinOp):
            lt = self.expr_type(e.left, scope)
            rt = self.expr_type(e.right, scope)
            if lt is None or rt is None:
                return None
            if lt == STRING and rt == STRING and e.op == "+":
                return STRING
            if lt in (INT, FLOAT) and rt in (INT, FLOAT):
                return INT if lt == rt == INT else FLOAT
            self.error(e, "type-mismatch", f"operator {e.op!r} not defined for {lt} and {rt}")
            return None
        self.error(e, "type-mismatch", "not an expression")
        return None


def _assignable(target: Ty, value: Ty) -> bool:
    return target == value or (target == FLOAT and value == INT)


def _is_lvalue(e) -> bool:
    while isinstance(e, A.Index):
        e = e.base
    return isinstance(e, A.Name)


def _root(e) -> str:
    while isinstance(e, A.Index):
        e = e.base
    return e.id


class _StaticWalk:
    """Execute the scalar part of the program to catch evaluation errors."""

    def __init__(self, checker):
        self.checker = checker
        self.reported = set()

    def report(self, node, err: EvalError):
        key = id(node)
        if key in self.reported:
            return
        self.reported.add(key)
        self.checker.errors.append(Diagnostic(err.span or node.span, str(err), "static-eval"))

    def run(self, stmts, env):
        for s in stmts:
            try:
                self.stmt(s, env)
            except EvalError as err:
                self.report(s, err)

    def stmt(self, s, env):
        if isinstance(s, A.VarDecl):
            if s.init is not None and not isinstance(s.init, A.Call):
                env[s.name] = _coerce(s.type, evaluate(s.init, env))
            self.annotations(s.annotations, env)
        elif isinstance(s, A.Assign):
            env[s.target.id] = evaluate(s.value, env)
        elif isinstance(s, A.CallStmt):
            self.annotations(s.annotations, env)
        elif isinstance(s, A.Foreach):
            values = range_values(s.over, env)
            if not needs_iteration(s.body):
                return
            for i, v in enumerate(values):
                inner = dict(env)
                inner[s.var] = v
                if s.index:
                    inner[s.index] = i
                self.run(s.body, inner)

    def annotations(self, anns, env):
        for a in anns:
            if a.name not in ANNOTATIONS or len(a.args) != 1:
                continue
            v = evaluate(a.args[0], env)
            if a.name == "width" and (not isinstance(v, int) or v < 1):
                raise EvalError(f"@width must be a positive integer, got {v!r}", a.span)
            if a.name == "duration" and v < 0:
                raise EvalError(f"@duration must be non-negative, got {v!r}", a.span)


def _coerce(type_name, value):
    if type_name == "float" and isinstance(value, int):
        return float(value)
    return value


def typecheck(ast: A.Program) -> TypedProgram:
    """Resolve names and types, raising :class:`TypeErrors` on any problem."""
    checker = Checker()
    prog = checker.check_program(ast)
    if not checker.errors:
        _StaticWalk(checker).run(prog.statements, {})
    if checker.errors:
        checker.errors.sort(key=lambda d: (d.span.line, d.span.col))
        raise TypeErrors(checker.errors)
    return prog
