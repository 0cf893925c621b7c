"""Canonical formatting of syntax trees."""

from __future__ import annotations

from . import ast as A

_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "%": 2}
INDENT = "  "


def quote(s: str) -> str:
    body = s.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n").replace("\t", "\\t")
    return f'"{body}"'


def expr(e, parent_prec=0, right=False) -> str:
    if isinstance(e, A.IntLit):
        return str(e.value)
    if isinstance(e, A.FloatLit):
        text = repr(e.value)
        return text if ("." in text or "e" in text or "n" in text) else text + ".0"
    if isinstance(e, A.StrLit):
        return quote(e.value)
    if isinstance(e, A.Name):
        return e.id
    if isinstance(e, A.Index):
        return f"{expr(e.base, 3)}[{expr(e.index)}]"
    if isinstance(e, A.Neg):
        return "-" + expr(e.operand, 3)
    if isinstance(e, A.BinOp):
        prec = _PREC[e.op]
        text = f"{expr(e.left, prec)} {e.op} {expr(e.right, prec, right=True)}"
        if prec < parent_prec or (right and prec == parent_prec):
            return f"({text})"
        return text
    raise TypeError(f"not an expression: {e!r}")


def _range(r) -> str:
    if isinstance(r, A.RangeLit):
        return f"[{expr(r.lo)}:{expr(r.hi)}]"
    return "[" + ", ".join(expr(i) for i in r.items) + "]"


def _param(p: A.Param) -> str:
    return f"{p.type} {p.name}" + "[]" * p.dims


def _call(c: A.Call) -> str:
    return f"{c.app}(" + ", ".join(expr(a) for a in c.args) + ")"


def _annotations(anns, pad) -> list:
    lines = []
    for a in anns:
        if a.args:
            lines.append(f"{pad}@{a.name}(" + ", ".join(expr(x) for x in a.args) + ")")
        else:
            lines.append(f"{pad}@{a.name}")
    return lines


def _stmt(s, depth) -> list:
    pad = INDENT * depth
    if isinstance(s, A.TypeDecl):
        return [f"{pad}type {s.name};"]
    if isinstance(s, A.AppDecl):
        words = " ".join(quote(w.value) if isinstance(w, A.StrWord) else w.name for w in s.words)
        head = f"{pad}app ({', '.join(map(_param, s.outs))}) {s.name}({', '.join(map(_param, s.ins))}) {{"
        lines = [head]
        if words:
            lines.append(pad + INDENT + words)
        lines.append(pad + "}")
        return lines
    if isinstance(s, A.VarDecl):
        text = f"{s.type} {s.name}" + "[]" * s.dims
        if s.mapping is not None:
            text += f" <{quote(s.mapping)}>"
        if s.init is not None:
            init = _call(s.init) if isinstance(s.init, A.Call) else expr(s.init)
            text += f" = {init}"
        return _annotations(s.annotations, pad) + [pad + text + ";"]
    if isinstance(s, A.CallStmt):
        if len(s.outs) == 1:
            lhs = expr(s.outs[0])
        else:
            lhs = "(" + ", ".join(expr(o) for o in s.outs) + ")"
        return _annotations(s.annotations, pad) + [f"{pad}{lhs} = {_call(s.call)};"]
    if isinstance(s, A.Assign):
        return [f"{pad}{expr(s.target)} = {expr(s.value)};"]
    if isinstance(s, A.Foreach):
        head = f"{pad}foreach {s.var}" + (f", {s.index}" if s.index else "") + f" in {_range(s.over)} {{"
        lines = [head]
        for b in s.body:
            lines.extend(_stmt(b, depth + 1))
        lines.append(pad + "}")
        return lines
    raise TypeError(f"not a statement: {s!r}")


def unparse(prog: A.Program) -> str:
    """Render ``prog`` in canonical form; ``parse(unparse(p)) == p``."""
    lines = []
    prev = None
    for item in prog.items:
        kind = type(item)
        if prev is not None and (kind is A.AppDecl or prev is A.AppDecl or kind is not prev):
            lines.append("")
        lines.extend(_stmt(item, 0))
        prev = kind
    return "\n".join(lines) + "\n"
