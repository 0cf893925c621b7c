"""Recursive-descent parser for ``.mf`` scripts.

Grammar (EBNF)::

    program    = { item } ;
    item       = "type" IDENT ";"
               | "app" "(" params ")" IDENT "(" [ params ] ")" "{" { word } "}"
               | stmt ;
    stmt       = { annotation } ( vardecl | callstmt | assign )
               | "foreach" IDENT [ "," IDENT ] "in" range "{" { stmt } "}" ;
    annotation = "@" IDENT [ "(" [ exprs ] ")" ] ;
    vardecl    = IDENT IDENT { "[" "]" } [ "<" STRING ">" ] [ "=" ( call | expr ) ] ";" ;
    callstmt   = "(" lvalue { "," lvalue } ")" "=" call ";" ;
    assign     = lvalue "=" ( call | expr ) ";" ;
    call       = IDENT "(" [ exprs ] ")" ;
    range      = "[" expr ":" expr "]" | "[" [ exprs ] "]" ;
    params     = param { "," param } ;
    param      = IDENT IDENT { "[" "]" } ;
    word       = STRING | IDENT ;
    lvalue     = IDENT { "[" expr "]" } ;
    expr       = term { ( "+" | "-" ) term } ;
    term       = unary { ( "*" | "/" | "%" ) unary } ;
    unary      = "-" unary | postfix ;
    postfix    = primary { "[" expr "]" } ;
    primary    = INT | FLOAT | STRING | IDENT | "(" expr ")" ;
"""

from __future__ import annotations

from . import ast as A
from .diagnostics import Diagnostic, ParseErrors
from .lexer import Token, tokenize


class _Fail(Exception):
    pass


class Parser:
    def __init__(self, tokens, filename="<script>"):
        self.toks = tokens
        self.pos = 0
        self.errors = []
        self.filename = filename

    # -- token helpers --

    @property
    def cur(self) -> Token:
        return self.toks[self.pos]

    def peek(self, k=1) -> Token:
        return self.toks[min(self.pos + k, len(self.toks) - 1)]

    def at(self, value, kind=None):
        t = self.cur
        if kind is not None and t.kind != kind:
            return False
        return t.value == value and t.kind in ("punct", "keyword")

    def advance(self):
        t = self.cur
        if t.kind != "eof":
            self.pos += 1
        return t

    def fail(self, message, token=None):
        token = token or self.cur
        self.errors.append(Diagnostic(token.span, message))
        raise _Fail

    def expect(self, value):
        if not self.at(value):
            self.fail(f"expected {value!r}, found {_describe(self.cur)}")
        return self.advance()

    def ident(self, what="identifier"):
        if self.cur.kind != "ident":
            self.fail(f"expected {what}, found {_describe(self.cur)}")
        return self.advance()

    def sync(self, in_block):
        depth = 0
        while self.cur.kind != "eof":
            if self.at("{"):
                depth += 1
            elif self.at("}"):
                if depth == 0:
                    if not in_block:
                        self.advance()
                    return
                depth -= 1
                if depth == 0 and not in_block:
                    self.advance()
                    return
            elif self.at(";") and depth == 0:
                self.advance()
                return
            self.advance()

    # -- top level --

    def program(self):
        items = []
        start = self.cur.span
        while self.cur.kind != "eof":
            before = self.pos
            try:
                items.append(self.item())
            except _Fail:
                self.sync(in_block=False)
                if self.pos == before:
                    self.advance()
        return A.Program(tuple(items), span=start)

    def item(self):
        if self.at("type", "keyword"):
            tok = self.advance()
            name = self.ident("type name").value
            self.expect(";")
            return A.TypeDecl(name, span=tok.span)
        if self.at("app", "keyword"):
            return self.app_decl()
        return self.stmt()

    def app_decl(self):
        tok = self.advance()
        self.expect("(")
        if self.at(")"):
            self.fail("an app must declare at least one output parameter")
        outs = self.params()
        self.expect(")")
        name = self.ident("app name").value
        self.expect("(")
        ins = () if self.at(")") else self.params()
        self.expect(")")
        self.expect("{")
        words = []
        while not self.at("}"):
            t = self.cur
            if t.kind == "string":
                words.append(A.StrWord(t.value, span=t.span))
            elif t.kind == "ident":
                words.append(A.RefWord(t.value, span=t.span))
            else:
                self.fail(f"expected command word (string or parameter name), found {_describe(t)}")
            self.advance()
        self.expect("}")
        return A.AppDecl(name, outs, ins, tuple(words), span=tok.span)

    def params(self):
        out = [self.param()]
        while self.at(","):
            self.advance()
            out.append(self.param())
        return tuple(out)

    def param(self):
        t = self.ident("parameter type")
        name = self.ident("parameter name").value
        return A.Param(t.value, name, self.dims(), span=t.span)

    def dims(self):
        n = 0
        while self.at("[") and self.peek().kind == "punct" and self.peek().value == "]":
            self.advance()
            self.advance()
            n += 1
        return n

    # -- statements --

    def block(self):
        self.expect("{")
        body = []
        while not self.at("}"):
            if self.cur.kind == "eof":
                self.fail("unexpected end of input inside block")
            before = self.pos
            try:
                body.append(self.stmt())
            except _Fail:
                self.sync(in_block=True)
                if self.pos == before and not self.at("}"):
                    self.advance()
        self.expect("}")
        return tuple(body)

    def stmt(self):
        if self.at("foreach", "keyword"):
            return self.foreach()
        annotations = []
        while self.at("@"):
            annotations.append(self.annotation())
        t = self.cur
        if t.kind == "punct" and t.value == "(":
            return self.call_stmt(tuple(annotations))
        if t.kind == "ident" and self.peek().kind == "ident":
            return self.var_decl(tuple(annotations))
        if t.kind == "ident":
            return self.assign(tuple(annotations))
        self.fail(f"expected a statement, found {_describe(t)}")

    def annotation(self):
        tok = self.advance()
        name = self.ident("annotation name").value
        args = ()
        if self.at("("):
            self.advance()
            args = () if self.at(")") else self.exprs()
            self.expect(")")
        return A.Annotation(name, args, span=tok.span)

    def foreach(self):
        tok = self.advance()
        var = self.ident("loop variable").value
        index = None
        if self.at(","):
            self.advance()
            index = self.ident("index variable").value
        self.expect("in")
        over = self.range_expr()
        body = self.block()
        return A.Foreach(var, index, over, body, span=tok.span)

    def range_expr(self):
        tok = self.expect("[")
        if self.at("]"):
            self.advance()
            return A.ListLit((), span=tok.span)
        first = self.expr()
        if self.at(":"):
            self.advance()
            hi = self.expr()
            self.expect("]")
            return A.RangeLit(first, hi, span=tok.span)
        items = [first]
        while self.at(","):
            self.advance()
            items.append(self.expr())
        self.expect("]")
        return A.ListLit(tuple(items), span=tok.span)

    def var_decl(self, annotations):
        t = self.advance()
        name_tok = self.ident("variable name")
        dims = self.dims()
        mapping = None
        if self.at("<"):
            self.advance()
            if self.cur.kind != "string":
                self.fail(f"expected mapping path string, found {_describe(self.cur)}")
            mapping = self.advance().value
            self.expect(">")
        init = None
        if self.at("="):
            self.advance()
            init = self.call_or_expr()
        self.expect(";")
        if annotations and not isinstance(init, A.Call):
            self.fail("annotations apply only to app calls", t)
        return A.VarDecl(t.value, name_tok.value, dims, mapping, init, annotations, span=t.span)

    def call_stmt(self, annotations):
        tok = self.advance()
        outs = [self.lvalue()]
        while self.at(","):
            self.advance()
            outs.append(self.lvalue())
        self.expect(")")
        self.expect("=")
        call = self.call()
        self.expect(";")
        return A.CallStmt(tuple(outs), call, annotations, span=tok.span)

    def assign(self, annotations):
        tok = self.cur
        target = self.lvalue()
        self.expect("=")
        value = self.call_or_expr()
        self.expect(";")
        if isinstance(value, A.Call):
            return A.CallStmt((target,), value, annotations, span=tok.span)
        if annotations:
            self.fail("annotations apply only to app calls", tok)
        return A.Assign(target, value, span=tok.span)

    def call_or_expr(self):
        if self.cur.kind == "ident" and self.peek().kind == "punct" and self.peek().value == "(":
            return self.call()
        return self.expr()

    def call(self):
        t = self.ident("app name")
        self.expect("(")
        args = () if self.at(")") else self.exprs()
        self.expect(")")
        return A.Call(t.value, args, span=t.span)

    def lvalue(self):
        t = self.ident("variable name")
        node = A.Name(t.value, span=t.span)
        while self.at("["):
            self.advance()
            idx = self.expr()
            self.expect("]")
            node = A.Index(node, idx, span=t.span)
        return node

    # -- expressions --

    def exprs(self):
        out = [self.expr()]
        while self.at(","):
            self.advance()
            out.append(self.expr())
        return tuple(out)

    def expr(self):
        left = self.term()
        while self.at("+") or self.at("-"):
            op = self.advance()
            left = A.BinOp(op.value, left, self.term(), span=op.span)
        return left

    def term(self):
        left = self.unary()
        while self.at("*") or self.at("/") or self.at("%"):
            op = self.advance()
            left = A.BinOp(op.value, left, self.unary(), span=op.span)
        return left

    def unary(self):
        if self.at("-"):
            tok = self.advance()
            return A.Neg(self.unary(), span=tok.span)
        return self.postfix()

    def postfix(self):
        node = self.primary()
        while self.at("["):
            tok = self.advance()
            idx = self.expr()
            self.expect("]")
            node = A.Index(node, idx, span=tok.span)
        return node

    def primary(self):
        t = self.cur
        if t.kind == "int":
            self.advance()
            return A.IntLit(t.value, span=t.span)
        if t.kind == "float":
            self.advance()
            return A.FloatLit(t.value, span=t.span)
        if t.kind == "string":
            self.advance()
            return A.StrLit(t.value, span=t.span)
        if t.kind == "ident":
            self.advance()
            return A.Name(t.value, span=t.span)
        if self.at("("):
            self.advance()
            e = self.expr()
            self.expect(")")
            return e
        self.fail(f"expected an expression, found {_describe(t)}")


def _describe(tok: Token):
    if tok.kind == "eof":
        return "end of input"
    if tok.kind == "string":
        return "string literal"
    return repr(str(tok.value))


def parse(source: str, filename: str = "<script>") -> A.Program:
    """Parse script text, raising :class:`ParseErrors` with every error found."""
    tokens, lex_errors = tokenize(source, filename)
    p = Parser(tokens, filename)
    prog = p.program()
    errors = lex_errors + p.errors
    if errors:
        errors.sort(key=lambda d: (d.span.line, d.span.col))
        raise ParseErrors(errors)
    return prog
