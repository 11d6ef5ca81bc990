"""Canonical source renderer: `parse(to_source(p))` equals `p` modulo spans."""

from __future__ import annotations

from .ast import (
    BinOp,
    Call,
    Construct,
    Expr,
    ExprStmt,
    FieldAccess,
    FunctionDecl,
    Let,
    Literal,
    LiteralPattern,
    Match,
    Pattern,
    Program,
    Return,
    TaskRun,
    TypeExpr,
    VariantPattern,
    VarRef,
    WildcardPattern,
    Yield,
)
from .tokens import STRING_ESCAPES

_REVERSE_ESCAPES = {v: k for k, v in STRING_ESCAPES.items()}


def quote_string(s: str) -> str:
    out = ['"']
    for ch in s:
        esc = _REVERSE_ESCAPES.get(ch)
        out.append("\\" + esc if esc is not None else ch)
    out.append('"')
    return "".join(out)


def literal_text(value: object) -> str:
    if value is None:
        return "none"
    if value is True:
        return "true"
    if value is False:
        return "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, str):
        return quote_string(value)
    if isinstance(value, bytes):
        return f'0x"{value.hex()}"'
    raise TypeError(f"unprintable literal {value!r}")


def type_text(t: TypeExpr) -> str:
    if not t.name:
        inner = ", ".join(f"{n}: {type_text(ft)}" for n, ft in t.record_fields)
        return "{" + inner + "}"
    if t.args:
        return f"{t.name}<{', '.join(type_text(a) for a in t.args)}>"
    return t.name


def expr_text(e: Expr) -> str:
    if isinstance(e, Literal):
        return literal_text(e.value)
    if isinstance(e, VarRef):
        return e.name
    if isinstance(e, Call):
        return f"{e.name}({', '.join(expr_text(a) for a in e.args)})"
    if isinstance(e, TaskRun):
        args = ", ".join(expr_text(a) for a in e.args)
        return f"Task::run<{e.capability}::{e.operation}>({args})"
    if isinstance(e, Construct):
        if e.type_name == "List":
            return "List{" + ", ".join(expr_text(a) for _, a in e.args) + "}"
        if e.type_name == "Record":
            return "{" + ", ".join(f"{n}: {expr_text(a)}" for n, a in e.args) + "}"
        if e.args:
            return f"{e.type_name}::{e.variant}({expr_text(e.args[0][1])})"
        return f"{e.type_name}::{e.variant}"
    if isinstance(e, FieldAccess):
        return f"{_maybe_paren(e.subject)}.{e.name}"
    if isinstance(e, BinOp):
        return f"{_maybe_paren(e.lhs)} {e.op} {_maybe_paren(e.rhs)}"
    raise TypeError(f"unprintable expression {e!r}")


def _maybe_paren(e: Expr) -> str:
    # Operand nesting is always parenthesized; the flat canonical form never
    # relies on precedence, so re-parsing is unambiguous.
    text = expr_text(e)
    return f"({text})" if isinstance(e, BinOp) else text


def pattern_text(p: Pattern) -> str:
    if isinstance(p, WildcardPattern):
        return "_"
    if isinstance(p, LiteralPattern):
        return literal_text(p.value)
    if isinstance(p, VariantPattern):
        return f"{p.enum_name}::{p.variant}"
    raise TypeError(f"unprintable pattern {p!r}")


def _stmt_lines(stmt, indent: str) -> list[str]:
    if isinstance(stmt, Let):
        return [f"{indent}let {stmt.name} = {expr_text(stmt.expr)};"]
    if isinstance(stmt, Return):
        return [f"{indent}return {expr_text(stmt.expr)};"]
    if isinstance(stmt, Yield):
        return [f"{indent}yield {expr_text(stmt.expr)};"]
    if isinstance(stmt, ExprStmt):
        return [f"{indent}{expr_text(stmt.expr)};"]
    if isinstance(stmt, Match):
        lines = [f"{indent}match({expr_text(stmt.subject)}) {{"]
        for arm in stmt.arms:
            lines.append(f"{indent}  {pattern_text(arm.pattern)} => {{")
            for inner in arm.body:
                lines.extend(_stmt_lines(inner, indent + "    "))
            lines.append(f"{indent}  }}")
        lines.append(f"{indent}}}")
        return lines
    raise TypeError(f"unprintable statement {stmt!r}")


def _decl_lines(decl: FunctionDecl) -> list[str]:
    params = ", ".join(f"{n}: {type_text(t)}" for n, t in decl.params)
    lines = [f"{decl.kind} {decl.name}({params}): {type_text(decl.return_type)} {{"]
    for stmt in decl.body:
        lines.extend(_stmt_lines(stmt, "  "))
    lines.append("}")
    return lines


def to_source(p: Program) -> str:
    lines: list[str] = [f"import {name};" for name in p.imports]
    if lines and p.declarations():
        lines.append("")
    for i, decl in enumerate(p.declarations()):
        if i:
            lines.append("")
        lines.extend(_decl_lines(decl))
    return "\n".join(lines) + "\n"
