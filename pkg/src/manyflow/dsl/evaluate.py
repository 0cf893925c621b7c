"""Evaluation of scalar expressions.

Every scalar in the language is known before execution (apps only produce
files), so loop ranges, annotation arguments and array indices all reduce
to constants once the enclosing loop variables are fixed.
"""

from __future__ import annotations

from . import ast as A


class EvalError(Exception):
    def __init__(self, message, span=None):
        super().__init__(message)
        self.span = span


def evaluate(e, env):
    t = type(e)
    if t is A.IntLit or t is A.FloatLit or t is A.StrLit:
        return e.value
    if t is A.Name:
        try:
            return env[e.id]
        except KeyError:
            raise EvalError(f"{e.id!r} has no value here", e.span) from None
    if t is A.Neg:
        v = evaluate(e.operand, env)
        if isinstance(v, str):
            raise EvalError("cannot negate a string", e.span)
        return -v
    if t is A.BinOp:
        return binop(e.op, evaluate(e.left, env), evaluate(e.right, env), e.span)
    raise EvalError(f"{type(e).__name__} is not a scalar expression", getattr(e, "span", None))


def binop(op, a, b, span=None):
    if isinstance(a, str) or isinstance(b, str):
        if op == "+" and isinstance(a, str) and isinstance(b, str):
            return a + b
        raise EvalError(f"operator {op!r} is not defined for strings", span)
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op in ("/", "%"):
        if b == 0:
            raise EvalError("division by zero", span)
        if op == "%":
            return a % b
        if isinstance(a, int) and isinstance(b, int):
            return a // b
        return a / b
    raise EvalError(f"unknown operator {op!r}", span)


def range_values(over, env):
    """Values and indices iterated by a foreach header."""
    if isinstance(over, A.RangeLit):
        lo = evaluate(over.lo, env)
        hi = evaluate(over.hi, env)
        if not isinstance(lo, int) or not isinstance(hi, int):
            raise EvalError("range bounds must be integers", over.span)
        return range(lo, hi + 1)
    return [evaluate(item, env) for item in over.items]


def needs_iteration(body) -> bool:
    """True when expanding ``body`` once per iteration can change scalar state."""
    for s in body:
        if isinstance(s, (A.Foreach, A.Assign)):
            return True
        if isinstance(s, A.VarDecl) and (s.annotations or (s.init is not None and not isinstance(s.init, A.Call))):
            return True
        if isinstance(s, A.CallStmt) and s.annotations:
            return True
    return False
