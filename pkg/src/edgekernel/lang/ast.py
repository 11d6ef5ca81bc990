"""AST for the mini-language.

Nodes are frozen dataclasses; equality is structural and ignores spans, so
`parse(to_source(p)) == p` is the round-trip law.  The node set is closed:
five statement forms, seven expression forms, three pattern forms.  Nothing
in it can observe host identity, time, randomness, or value addresses.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, fields

ZERO_SPAN = (1, 1, 0)


@dataclass(frozen=True)
class Span:
    line: int
    column: int
    length: int

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.line, self.column, self.length)


NO_SPAN = Span(*ZERO_SPAN)


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" | "warning"
    message: str
    span: Span

    def render(self, origin: str = "<input>") -> str:
        return f"{origin}:{self.span.line}:{self.span.column}: {self.severity}: {self.message}"


@dataclass(frozen=True)
class TypeExpr:
    """`Int`, `APIResult<Int, String>`, or a record form `{a: Int, b: String}`
    (record form has name "" and field pairs)."""

    name: str
    args: tuple[TypeExpr, ...] = ()
    record_fields: tuple[tuple[str, TypeExpr], ...] = ()
    span: Span = field(default=NO_SPAN, compare=False)


# ----------------------------------------------------------------------
# Expressions


@dataclass(frozen=True)
class Literal:
    """value: int | str | bytes | bool | None (unit)."""

    value: object
    span: Span = field(default=NO_SPAN, compare=False)


@dataclass(frozen=True)
class VarRef:
    name: str
    span: Span = field(default=NO_SPAN, compare=False)


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple["Expr", ...]
    span: Span = field(default=NO_SPAN, compare=False)


@dataclass(frozen=True)
class TaskRun:
    capability: str
    operation: str
    args: tuple["Expr", ...]
    span: Span = field(default=NO_SPAN, compare=False)


@dataclass(frozen=True)
class Construct:
    """Value construction: enum `E::V(payload?)` (variant set), list
    `List{...}` (type_name "List", unnamed args), record `{a: e}`
    (type_name "Record", named args)."""

    type_name: str
    variant: str | None
    args: tuple[tuple[str | None, "Expr"], ...]
    span: Span = field(default=NO_SPAN, compare=False)


@dataclass(frozen=True)
class FieldAccess:
    subject: "Expr"
    name: str
    span: Span = field(default=NO_SPAN, compare=False)


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * / < <= > >= == !=
    lhs: "Expr"
    rhs: "Expr"
    span: Span = field(default=NO_SPAN, compare=False)


Expr = Literal | VarRef | Call | TaskRun | Construct | FieldAccess | BinOp

BINARY_OPERATORS = ("+", "-", "*", "/", "<", "<=", ">", ">=", "==", "!=")


# ----------------------------------------------------------------------
# Patterns and statements


@dataclass(frozen=True)
class VariantPattern:
    enum_name: str
    variant: str
    span: Span = field(default=NO_SPAN, compare=False)


@dataclass(frozen=True)
class WildcardPattern:
    span: Span = field(default=NO_SPAN, compare=False)


@dataclass(frozen=True)
class LiteralPattern:
    value: object
    span: Span = field(default=NO_SPAN, compare=False)


Pattern = VariantPattern | WildcardPattern | LiteralPattern


@dataclass(frozen=True)
class MatchArm:
    pattern: Pattern
    body: tuple["Stmt", ...]
    span: Span = field(default=NO_SPAN, compare=False)


@dataclass(frozen=True)
class Let:
    name: str
    expr: Expr
    span: Span = field(default=NO_SPAN, compare=False)


@dataclass(frozen=True)
class Return:
    expr: Expr
    span: Span = field(default=NO_SPAN, compare=False)


@dataclass(frozen=True)
class Yield:
    expr: Expr
    span: Span = field(default=NO_SPAN, compare=False)


@dataclass(frozen=True)
class Match:
    subject: Expr
    arms: tuple[MatchArm, ...]
    span: Span = field(default=NO_SPAN, compare=False)


@dataclass(frozen=True)
class ExprStmt:
    expr: Expr
    span: Span = field(default=NO_SPAN, compare=False)


Stmt = Let | Return | Yield | Match | ExprStmt


# ----------------------------------------------------------------------
# Declarations


@dataclass(frozen=True)
class FunctionDecl:
    name: str
    kind: str  # "function" | "action" | "api"
    params: tuple[tuple[str, TypeExpr], ...]
    return_type: TypeExpr
    body: tuple[Stmt, ...]
    span: Span = field(default=NO_SPAN, compare=False)


@dataclass(frozen=True)
class Program:
    functions: tuple[FunctionDecl, ...]  # kinds function and action
    apis: tuple[FunctionDecl, ...]  # kind api
    imports: tuple[str, ...]

    def declarations(self) -> tuple[FunctionDecl, ...]:
        return self.functions + self.apis

    def find(self, name: str) -> FunctionDecl | None:
        for decl in self.declarations():
            if decl.name == name:
                return decl
        return None


@dataclass(frozen=True)
class SourceProgram:
    text: str
    origin: str = "<input>"

    def __post_init__(self) -> None:
        if not self.origin:
            raise ValueError("origin must be non-empty")
        # Round-tripping through UTF-8 rejects surrogates early.
        self.text.encode("utf-8")


# ----------------------------------------------------------------------
# Canonical serialization (hashing only)


def _jsonable(node: object) -> object:
    if isinstance(node, tuple):
        return [_jsonable(x) for x in node]
    if isinstance(node, bytes):
        return {"k": "bytes", "hex": node.hex()}
    if node is None or isinstance(node, (bool, int, str)):
        return node
    out: dict[str, object] = {"k": type(node).__name__}
    for f in fields(node):  # type: ignore[arg-type]
        if f.name == "span":
            continue
        out[f.name] = _jsonable(getattr(node, f.name))
    return out


def canonical_serialize(p: Program) -> str:
    """Key-sorted, span-free text form of the AST; input to program_hash."""
    return json.dumps(_jsonable(p), sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def program_hash(p: Program) -> str:
    return hashlib.sha256(canonical_serialize(p).encode("utf-8")).hexdigest()
