"""The ``.mf`` parallel scripting language: parse, check, lower."""

from .ast import Program, Span
from .diagnostics import Diagnostic, ParseErrors, TypeErrors
from .lower import DataflowProgram, lower
from .parser import parse
from .typecheck import TypedProgram, typecheck
from .unparse import unparse


def compile_source(source: str, filename: str = "<script>") -> DataflowProgram:
    """parse + typecheck + lower in one step."""
    return lower(typecheck(parse(source, filename)), filename)


__all__ = [
    "DataflowProgram", "Diagnostic", "ParseErrors", "Program", "Span", "TypeErrors",
    "TypedProgram", "compile_source", "lower", "parse", "typecheck", "unparse",
]
