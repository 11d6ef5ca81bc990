"""Mini-language front end: lexer, parser, canonical printer, validator."""

from .ast import (
    BINARY_OPERATORS,
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
    canonical_serialize,
    program_hash,
)
from .parser import parse
from .printer import to_source
from .validate import normalize_variant, validate

__all__ = [
    "BINARY_OPERATORS",
    "BinOp",
    "Call",
    "Construct",
    "Diagnostic",
    "Expr",
    "ExprStmt",
    "FieldAccess",
    "FunctionDecl",
    "Let",
    "Literal",
    "LiteralPattern",
    "Match",
    "MatchArm",
    "Pattern",
    "Program",
    "Return",
    "SourceProgram",
    "Span",
    "Stmt",
    "TaskRun",
    "TypeExpr",
    "VariantPattern",
    "VarRef",
    "WildcardPattern",
    "Yield",
    "canonical_serialize",
    "normalize_variant",
    "parse",
    "program_hash",
    "to_source",
    "validate",
]
