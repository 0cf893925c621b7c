from __future__ import annotations

from dataclasses import dataclass

from ..errors import ManyflowError
from .ast import Span


@dataclass(frozen=True)
class Diagnostic:
    span: Span
    message: str
    kind: str = "syntax"

    def __str__(self):
        return f"{self.span}: {self.kind} error: {self.message}"


class DiagnosticErrors(ManyflowError):
    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("\n".join(str(d) for d in self.diagnostics))

    def kinds(self):
        return {d.kind for d in self.diagnostics}


class ParseErrors(DiagnosticErrors):
    pass


class TypeErrors(DiagnosticErrors):
    pass
