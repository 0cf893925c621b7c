"""Syntax tree for ``.mf`` scripts.

Every node carries a :class:`Span`; spans are excluded from equality so two
trees parsed from differently formatted text compare equal when their
structure matches.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Union


class Span(NamedTuple):
    line: int
    col: int
    file: str = "<script>"

    def __str__(self):
        return f"{self.file}:{self.line}:{self.col}"


def _span():
    return field(default=None, compare=False, repr=False)


# -- expressions ----------------------------------------------------------------

@dataclass(frozen=True)
class IntLit:
    value: int
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class FloatLit:
    value: float
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class StrLit:
    value: str
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class Name:
    id: str
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class Index:
    base: "Expr"
    index: "Expr"
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class Neg:
    operand: "Expr"
    span: Optional[Span] = _span()


Expr = Union[IntLit, FloatLit, StrLit, Name, Index, BinOp, Neg]


@dataclass(frozen=True)
class RangeLit:
    """Inclusive integer range ``[lo:hi]``."""

    lo: Expr
    hi: Expr
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class ListLit:
    items: tuple
    span: Optional[Span] = _span()


# -- declarations and statements -------------------------------------------------

@dataclass(frozen=True)
class TypeDecl:
    name: str
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class Param:
    type: str
    name: str
    dims: int = 0
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class StrWord:
    value: str
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class RefWord:
    name: str
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class AppDecl:
    name: str
    outs: tuple
    ins: tuple
    words: tuple
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class Annotation:
    name: str
    args: tuple
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class Call:
    app: str
    args: tuple
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class VarDecl:
    type: str
    name: str
    dims: int = 0
    mapping: Optional[str] = None
    init: Union[Expr, Call, None] = None
    annotations: tuple = ()
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class CallStmt:
    outs: tuple
    call: Call
    annotations: tuple = ()
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class Assign:
    target: Expr
    value: Expr
    span: Optional[Span] = _span()


@dataclass(frozen=True)
class Foreach:
    var: str
    index: Optional[str]
    over: Union[RangeLit, ListLit]
    body: tuple
    span: Optional[Span] = _span()


Stmt = Union[VarDecl, CallStmt, Assign, Foreach]


@dataclass(frozen=True)
class Program:
    items: tuple
    span: Optional[Span] = _span()


def walk(node):
    """Yield ``node`` and all descendant nodes, depth first."""
    yield node
    for name in getattr(node, "__dataclass_fields__", ()):
        if name == "span":
            continue
        value = getattr(node, name)
        if isinstance(value, tuple):
            for item in value:
                if hasattr(item, "__dataclass_fields__"):
                    yield from walk(item)
        elif hasattr(value, "__dataclass_fields__"):
            yield from walk(value)
