from __future__ import annotations

import re
from typing import NamedTuple

from .ast import Span
from .diagnostics import Diagnostic

KEYWORDS = {"type", "app", "foreach", "in"}
PUNCT = set("(){}[];,<>=:+-*/%@")

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>//[^\n]*|\#[^\n]*)
  | (?P<block>/\*)
  | (?P<float>\d+\.\d*(?:[eE][+-]?\d+)?|\d+[eE][+-]?\d+|\.\d+(?:[eE][+-]?\d+)?)
  | (?P<int>\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<string>")
  | (?P<punct>[(){}\[\];,<>=:+\-*/%@])
    """,
    re.VERBOSE,
)

_ESCAPES = {"n": "\n", "t": "\t", '"': '"', "\\": "\\"}


class Token(NamedTuple):
    kind: str  # ident, keyword, int, float, string, punct, eof
    value: object
    span: Span


def tokenize(source: str, filename: str = "<script>"):
    """Return ``(tokens, diagnostics)``; lexing never raises."""
    tokens = []
    errors = []
    pos, line, line_start = 0, 1, 0
    n = len(source)
    while pos < n:
        col = pos - line_start + 1
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            errors.append(Diagnostic(Span(line, col, filename), f"unexpected character {source[pos]!r}"))
            pos += 1
            continue
        kind = m.lastgroup
        text = m.group()
        span = Span(line, col, filename)
        if kind == "nl":
            line += 1
            line_start = m.end()
            pos = m.end()
            continue
        if kind in ("ws", "comment"):
            pos = m.end()
            continue
        if kind == "block":
            end = source.find("*/", m.end())
            if end < 0:
                errors.append(Diagnostic(span, "unterminated block comment"))
                break
            body = source[pos:end + 2]
            newlines = body.count("\n")
            if newlines:
                line += newlines
                line_start = pos + body.rfind("\n") + 1
            pos = end + 2
            continue
        if kind == "string":
            value, pos, ok = _scan_string(source, m.end())
            if not ok:
                errors.append(Diagnostic(span, "unterminated string literal"))
            tokens.append(Token("string", value, span))
            continue
        if kind == "int":
            tokens.append(Token("int", int(text), span))
        elif kind == "float":
            tokens.append(Token("float", float(text), span))
        elif kind == "ident":
            tokens.append(Token("keyword" if text in KEYWORDS else "ident", text, span))
        else:
            tokens.append(Token("punct", text, span))
        pos = m.end()
    tokens.append(Token("eof", None, Span(line, pos - line_start + 1, filename)))
    return tokens, errors


def _scan_string(source, pos):
    out = []
    n = len(source)
    while pos < n:
        ch = source[pos]
        if ch == '"':
            return "".join(out), pos + 1, True
        if ch == "\n":
            return "".join(out), pos, False
        if ch == "\\" and pos + 1 < n:
            out.append(_ESCAPES.get(source[pos + 1], source[pos + 1]))
            pos += 2
            continue
        out.append(ch)
        pos += 1
    return "".join(out), pos, False
