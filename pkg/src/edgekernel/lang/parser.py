"""Recursive-descent parser.

Collects diagnostics rather than raising; on a statement-level error it
resynchronizes at the next `;` or `}` so one typo does not drown the rest
of the file in noise.  Returns (Program | None, diagnostics): the Program
is None iff any error diagnostic was produced.
"""

from __future__ import annotations

from .ast import (
    BinOp,
    Call,
    Construct,
    Diagnostic,
    Expr,
    ExprStmt,
    FieldAccess,
    FunctionDecl,
    Let,
    Literal,
    LiteralPattern,
    Match,
    MatchArm,
    Pattern,
    Program,
    Return,
    SourceProgram,
    Span,
    Stmt,
    TaskRun,
    TypeExpr,
    VariantPattern,
    VarRef,
    WildcardPattern,
    Yield,
)
from .tokens import Token, lex

COMPARISON_OPS = ("==", "!=", "<=", ">=", "<", ">")
ADDITIVE_OPS = ("+", "-")
MULTIPLICATIVE_OPS = ("*", "/")

INT64_MAX = 2**63 - 1
INT64_MIN = -(2**63)


class _ParseError(Exception):
    """Internal unwinding signal; always caught inside parse()."""


class _Parser:
    def __init__(self, tokens: list[Token]) -> None:
        self.tokens = tokens
        self.pos = 0
        self.diags: list[Diagnostic] = []

    # -- token plumbing -------------------------------------------------

    def peek(self) -> Token:
        return self.tokens[self.pos]

    def advance(self) -> Token:
        tok = self.tokens[self.pos]
        if tok.kind != "eof":
            self.pos += 1
        return tok

    def at_punct(self, text: str) -> bool:
        tok = self.peek()
        return tok.kind == "punct" and tok.text == text

    def at_keyword(self, word: str) -> bool:
        tok = self.peek()
        return tok.kind == "keyword" and tok.text == word

    def error(self, message: str, span: Span | None = None) -> _ParseError:
        self.diags.append(Diagnostic("error", message, span or self.peek().span))
        return _ParseError()

    def expect_punct(self, text: str) -> Token:
        if not self.at_punct(text):
            raise self.error(f"expected {text!r}, found {self.peek().text or 'end of input'!r}")
        return self.advance()

    def expect_ident(self, what: str) -> Token:
        tok = self.peek()
        if tok.kind != "ident":
            raise self.error(f"expected {what}, found {tok.text or 'end of input'!r}")
        return self.advance()

    def int_literal(self, tok: Token, negated: bool = False) -> int:
        value = -tok.value if negated else tok.value  # type: ignore[operator]
        if not (INT64_MIN <= value <= INT64_MAX):
            raise self.error("integer literal out of 64-bit range", tok.span)
        return value

    def synchronize(self) -> None:
        # Skip to just past the next `;`, or stop before `}` / eof.
        while True:
            tok = self.peek()
            if tok.kind == "eof" or (tok.kind == "punct" and tok.text == "}"):
                return
            self.advance()
            if tok.kind == "punct" and tok.text == ";":
                return

    # -- declarations ---------------------------------------------------

    def parse_program(self) -> Program:
        imports: list[str] = []
        functions: list[FunctionDecl] = []
        apis: list[FunctionDecl] = []
        explicit_imports = False
        while self.peek().kind != "eof":
            try:
                if self.at_keyword("import"):
                    self.advance()
                    name = self.expect_ident("capability name").text
                    self.expect_punct(";")
                    imports.append(name)
                    explicit_imports = True
                elif self.peek().kind == "keyword" and self.peek().text in ("function", "action", "api"):
                    decl = self.parse_decl()
                    (apis if decl.kind == "api" else functions).append(decl)
                else:
                    raise self.error(
                        f"expected declaration or import, found {self.peek().text or 'end of input'!r}"
                    )
            except _ParseError:
                self.skip_to_next_decl()
        if not explicit_imports:
            # Fragment tolerance: a source with no import statements gets its
            # import set inferred from the capabilities it actually targets.
            inferred: list[str] = []
            for decl in functions + apis:
                for cap in _task_run_capabilities(decl.body):
                    if cap not in inferred:
                        inferred.append(cap)
            imports = inferred
        return Program(tuple(functions), tuple(apis), tuple(sorted(set(imports))))

    def skip_to_next_decl(self) -> None:
        depth = 0
        while self.peek().kind != "eof":
            tok = self.peek()
            if depth == 0 and tok.kind == "keyword" and tok.text in ("function", "action", "api", "import"):
                return
            if tok.kind == "punct" and tok.text == "{":
                depth += 1
            elif tok.kind == "punct" and tok.text == "}":
                depth = max(0, depth - 1)
                self.advance()
                if depth == 0:
                    return
                continue
            self.advance()

    def parse_decl(self) -> FunctionDecl:
        kind_tok = self.advance()
        name_tok = self.expect_ident(f"{kind_tok.text} name")
        self.expect_punct("(")
        params: list[tuple[str, TypeExpr]] = []
        if not self.at_punct(")"):
            while True:
                pname = self.expect_ident("parameter name").text
                self.expect_punct(":")
                params.append((pname, self.parse_type()))
                if self.at_punct(","):
                    self.advance()
                    continue
                break
        self.expect_punct(")")
        self.expect_punct(":")
        rtype = self.parse_type()
        body = self.parse_block()
        return FunctionDecl(
            name=name_tok.text,
            kind=kind_tok.text,
            params=tuple(params),
            return_type=rtype,
            body=body,
            span=name_tok.span,
        )

    def parse_type(self) -> TypeExpr:
        if self.at_punct("{"):
            open_tok = self.advance()
            fields: list[tuple[str, TypeExpr]] = []
            if not self.at_punct("}"):
                while True:
                    fname = self.expect_ident("field name").text
                    self.expect_punct(":")
                    fields.append((fname, self.parse_type()))
                    if self.at_punct(","):
                        self.advance()
                        continue
                    break
            self.expect_punct("}")
            return TypeExpr("", (), tuple(fields), span=open_tok.span)
        name_tok = self.expect_ident("type name")
        args: tuple[TypeExpr, ...] = ()
        if self.at_punct("<"):
            self.advance()
            collected: list[TypeExpr] = [self.parse_type()]
            while self.at_punct(","):
                self.advance()
                collected.append(self.parse_type())
            self.expect_punct(">")
            args = tuple(collected)
        return TypeExpr(name_tok.text, args, span=name_tok.span)

    # -- statements -----------------------------------------------------

    def parse_block(self) -> tuple[Stmt, ...]:
        self.expect_punct("{")
        stmts: list[Stmt] = []
        while not self.at_punct("}"):
            if self.peek().kind == "eof":
                raise self.error("unterminated block")
            try:
                stmts.append(self.parse_stmt())
            except _ParseError:
                self.synchronize()
        self.advance()
        return tuple(stmts)

    def parse_stmt(self) -> Stmt:
        tok = self.peek()
        if self.at_keyword("let"):
            self.advance()
            name = self.expect_ident("binding name").text
            self.expect_punct("=")
            expr = self.parse_expr()
            self.expect_punct(";")
            return Let(name, expr, span=tok.span)
        if self.at_keyword("return"):
            self.advance()
            expr = self.parse_expr()
            self.expect_punct(";")
            return Return(expr, span=tok.span)
        if self.at_keyword("yield"):
            self.advance()
            expr = self.parse_expr()
            self.expect_punct(";")
            return Yield(expr, span=tok.span)
        if self.at_keyword("match"):
            self.advance()
            self.expect_punct("(")
            subject = self.parse_expr()
            self.expect_punct(")")
            self.expect_punct("{")
            arms: list[MatchArm] = []
            while not self.at_punct("}"):
                if self.peek().kind == "eof":
                    raise self.error("unterminated match")
                arm_tok = self.peek()
                pattern = self.parse_pattern()
                self.expect_punct("=>")
                body = self.parse_block()
                arms.append(MatchArm(pattern, body, span=arm_tok.span))
            self.advance()
            if not arms:
                raise self.error("match requires at least one arm", tok.span)
            return Match(subject, tuple(arms), span=tok.span)
        expr = self.parse_expr()
        self.expect_punct(";")
        return ExprStmt(expr, span=tok.span)

    def parse_pattern(self) -> Pattern:
        tok = self.peek()
        if self.at_punct("_"):
            self.advance()
            return WildcardPattern(span=tok.span)
        if tok.kind in ("int", "string", "bytes", "keyword") and (
            tok.kind != "keyword" or tok.text in ("true", "false", "none")
        ):
            self.advance()
            value = self.int_literal(tok) if tok.kind == "int" else tok.value
            return LiteralPattern(value, span=tok.span)
        if self.at_punct("-"):
            self.advance()
            num = self.peek()
            if num.kind != "int":
                raise self.error("expected integer literal after '-'")
            self.advance()
            return LiteralPattern(self.int_literal(num, negated=True), span=tok.span)
        name = self.expect_ident("pattern")
        self.expect_punct("::")
        variant = self.expect_ident("variant name")
        return VariantPattern(name.text, variant.text, span=tok.span)

    # -- expressions ----------------------------------------------------

    def parse_expr(self) -> Expr:
        lhs = self.parse_additive()
        tok = self.peek()
        if tok.kind == "punct" and tok.text in COMPARISON_OPS:
            self.advance()
            rhs = self.parse_additive()
            return BinOp(tok.text, lhs, rhs, span=tok.span)
        return lhs

    def parse_additive(self) -> Expr:
        lhs = self.parse_multiplicative()
        while True:
            tok = self.peek()
            if tok.kind == "punct" and tok.text in ADDITIVE_OPS:
                self.advance()
                rhs = self.parse_multiplicative()
                lhs = BinOp(tok.text, lhs, rhs, span=tok.span)
            else:
                return lhs

    def parse_multiplicative(self) -> Expr:
        lhs = self.parse_postfix()
        while True:
            tok = self.peek()
            if tok.kind == "punct" and tok.text in MULTIPLICATIVE_OPS:
                self.advance()
                rhs = self.parse_postfix()
                lhs = BinOp(tok.text, lhs, rhs, span=tok.span)
            else:
                return lhs

    def parse_postfix(self) -> Expr:
        expr = self.parse_primary()
        while self.at_punct("."):
            dot = self.advance()
            name = self.expect_ident("field name")
            expr = FieldAccess(expr, name.text, span=dot.span)
        return expr

    def parse_args(self) -> tuple[Expr, ...]:
        self.expect_punct("(")
        args: list[Expr] = []
        if not self.at_punct(")"):
            while True:
                args.append(self.parse_expr())
                if self.at_punct(","):
                    self.advance()
                    continue
                break
        self.expect_punct(")")
        return tuple(args)

    def parse_primary(self) -> Expr:
        tok = self.peek()
        if tok.kind in ("int", "string", "bytes"):
            self.advance()
            value = self.int_literal(tok) if tok.kind == "int" else tok.value
            return Literal(value, span=tok.span)
        if tok.kind == "keyword" and tok.text in ("true", "false", "none"):
            self.advance()
            return Literal(tok.value, span=tok.span)
        if self.at_punct("-"):
            self.advance()
            num = self.peek()
            if num.kind != "int":
                raise self.error("expected integer literal after '-'")
            self.advance()
            return Literal(self.int_literal(num, negated=True), span=tok.span)
        if self.at_punct("("):
            self.advance()
            inner = self.parse_expr()
            self.expect_punct(")")
            return inner
        if self.at_punct("{"):
            self.advance()
            fields: list[tuple[str | None, Expr]] = []
            if not self.at_punct("}"):
                while True:
                    fname = self.expect_ident("record field name").text
                    self.expect_punct(":")
                    fields.append((fname, self.parse_expr()))
                    if self.at_punct(","):
                        self.advance()
                        continue
                    break
            self.expect_punct("}")
            return Construct("Record", None, tuple(fields), span=tok.span)
        if tok.kind != "ident":
            raise self.error(f"expected expression, found {tok.text or 'end of input'!r}")
        name_tok = self.advance()
        if name_tok.text == "List" and self.at_punct("{"):
            self.advance()
            items: list[tuple[str | None, Expr]] = []
            if not self.at_punct("}"):
                while True:
                    items.append((None, self.parse_expr()))
                    if self.at_punct(","):
                        self.advance()
                        continue
                    break
            self.expect_punct("}")
            return Construct("List", None, tuple(items), span=name_tok.span)
        if self.at_punct("::"):
            self.advance()
            second = self.expect_ident("name after '::'")
            if name_tok.text == "Task" and second.text == "run":
                self.expect_punct("<")
                cap = self.expect_ident("capability name")
                self.expect_punct("::")
                op = self.expect_ident("operation name")
                self.expect_punct(">")
                args = self.parse_args()
                return TaskRun(cap.text, op.text, args, span=name_tok.span)
            payload: tuple[tuple[str | None, Expr], ...] = ()
            if self.at_punct("("):
                call_args = self.parse_args()
                if len(call_args) > 1:
                    raise self.error("enum constructors take at most one payload", second.span)
                payload = tuple((None, a) for a in call_args)
            return Construct(name_tok.text, second.text, payload, span=name_tok.span)
        if self.at_punct("("):
            return Call(name_tok.text, self.parse_args(), span=name_tok.span)
        return VarRef(name_tok.text, span=name_tok.span)


def _task_run_capabilities(body: tuple[Stmt, ...]) -> list[str]:
    found: list[str] = []

    def walk_expr(e: Expr) -> None:
        if isinstance(e, TaskRun):
            found.append(e.capability)
            for a in e.args:
                walk_expr(a)
        elif isinstance(e, Call):
            for a in e.args:
                walk_expr(a)
        elif isinstance(e, Construct):
            for _, a in e.args:
                walk_expr(a)
        elif isinstance(e, FieldAccess):
            walk_expr(e.subject)
        elif isinstance(e, BinOp):
            walk_expr(e.lhs)
            walk_expr(e.rhs)

    def walk_stmt(s: Stmt) -> None:
        if isinstance(s, (Let, Return, Yield, ExprStmt)):
            walk_expr(s.expr)
        elif isinstance(s, Match):
            walk_expr(s.subject)
            for arm in s.arms:
                for inner in arm.body:
                    walk_stmt(inner)

    for s in body:
        walk_stmt(s)
    return found


def parse(src: SourceProgram | str) -> tuple[Program | None, list[Diagnostic]]:
    """Parse source text.  Program is None iff any error was diagnosed."""
    text = src.text if isinstance(src, SourceProgram) else src
    tokens, diags = lex(text)
    parser = _Parser(tokens)
    program = parser.parse_program()
    all_diags = diags + parser.diags
    if any(d.severity == "error" for d in all_diags):
        return None, all_diags
    return program, all_diags
