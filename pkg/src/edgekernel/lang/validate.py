"""Static checks between parse and run.

An empty result means the program is runnable: effects confined to actions
and apis, capabilities imported, apis returning APIResult shapes, all names
resolvable, matches exhaustive.  Each violation is one Diagnostic.
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
    LiteralPattern,
    Match,
    Program,
    Return,
    Stmt,
    TaskRun,
    VariantPattern,
    VarRef,
    WildcardPattern,
    Yield,
)

# The one built-in enum; `success`/`error` are Fig-1-style constructor
# aliases for the canonical variants.
APIRESULT_VARIANTS = frozenset(["Success", "Error"])
APIRESULT_ALIASES = {"success": "Success", "error": "Error"}

RESERVED_TYPE_NAMES = frozenset(["List", "Record", "Task"])


def normalize_variant(enum_name: str, variant: str) -> str:
    if enum_name == "APIResult":
        return APIRESULT_ALIASES.get(variant, variant)
    return variant


class _Checker:
    def __init__(self, program: Program) -> None:
        self.program = program
        self.diags: list[Diagnostic] = []
        self.decls: dict[str, FunctionDecl] = {}

    def error(self, message: str, span) -> None:
        self.diags.append(Diagnostic("error", message, span))

    def run(self) -> list[Diagnostic]:
        for decl in self.program.declarations():
            if decl.name in self.decls:
                self.error(f"duplicate declaration of '{decl.name}'", decl.span)
            else:
                self.decls[decl.name] = decl
        for decl in self.program.declarations():
            self.check_decl(decl)
        return self.diags

    def check_decl(self, decl: FunctionDecl) -> None:
        seen_params: set[str] = set()
        for pname, _ in decl.params:
            if pname in seen_params:
                self.error(f"duplicate parameter '{pname}' in '{decl.name}'", decl.span)
            seen_params.add(pname)
        if decl.kind == "api":
            rt = decl.return_type
            if rt.name != "APIResult" or len(rt.args) != 2:
                self.error(
                    f"api '{decl.name}' must return APIResult<_, _>", rt.span
                )
        self.check_body(decl, decl.body, set(seen_params))

    def check_body(self, decl: FunctionDecl, body: tuple[Stmt, ...], bound: set[str]) -> None:
        for stmt in body:
            if isinstance(stmt, Let):
                self.check_expr(decl, stmt.expr, bound)
                bound.add(stmt.name)
            elif isinstance(stmt, (Return, ExprStmt)):
                self.check_expr(decl, stmt.expr, bound)
            elif isinstance(stmt, Yield):
                if decl.kind == "function":
                    self.error(
                        f"yield in pure function '{decl.name}'", stmt.span
                    )
                self.check_expr(decl, stmt.expr, bound)
            elif isinstance(stmt, Match):
                self.check_expr(decl, stmt.subject, bound)
                for arm in stmt.arms:
                    self.check_body(decl, arm.body, set(bound))
                self.check_exhaustive(stmt)

    def check_exhaustive(self, stmt: Match) -> None:
        covered: set[str] = set()
        enum_names: set[str] = set()
        for arm in stmt.arms:
            if isinstance(arm.pattern, WildcardPattern):
                return
            if isinstance(arm.pattern, VariantPattern):
                enum_names.add(arm.pattern.enum_name)
                covered.add(normalize_variant(arm.pattern.enum_name, arm.pattern.variant))
        if enum_names == {"APIResult"} and covered >= APIRESULT_VARIANTS:
            return
        self.error("match is not exhaustive: add a '_' arm or cover all variants", stmt.span)

    def check_expr(self, decl: FunctionDecl, expr: Expr, bound: set[str]) -> None:
        if isinstance(expr, VarRef):
            if expr.name not in bound:
                self.error(f"undeclared name '{expr.name}'", expr.span)
        elif isinstance(expr, Call):
            target = self.decls.get(expr.name)
            if target is None:
                self.error(f"call to undeclared function '{expr.name}'", expr.span)
            elif target.kind == "api":
                self.error(
                    f"api '{expr.name}' cannot be called as a function", expr.span
                )
            elif target.kind == "action" and decl.kind == "function":
                self.error(
                    f"pure function '{decl.name}' calls action '{expr.name}'", expr.span
                )
            elif target is not None and len(expr.args) != len(target.params):
                self.error(
                    f"'{expr.name}' takes {len(target.params)} arguments, got {len(expr.args)}",
                    expr.span,
                )
            for a in expr.args:
                self.check_expr(decl, a, bound)
        elif isinstance(expr, TaskRun):
            if decl.kind == "function":
                self.error(
                    f"effect in pure function '{decl.name}'", expr.span
                )
            if expr.capability not in self.program.imports:
                self.error(f"capability '{expr.capability}' not imported", expr.span)
            for a in expr.args:
                self.check_expr(decl, a, bound)
        elif isinstance(expr, Construct):
            if expr.variant is not None and expr.type_name in RESERVED_TYPE_NAMES:
                self.error(f"'{expr.type_name}' is a reserved type name", expr.span)
            if expr.type_name == "Record":
                names = [n for n, _ in expr.args]
                if len(set(names)) != len(names):
                    self.error("duplicate record field name", expr.span)
            for _, a in expr.args:
                self.check_expr(decl, a, bound)
        elif isinstance(expr, FieldAccess):
            self.check_expr(decl, expr.subject, bound)
        elif isinstance(expr, BinOp):
            self.check_expr(decl, expr.lhs, bound)
            self.check_expr(decl, expr.rhs, bound)


def validate(program: Program) -> list[Diagnostic]:
    return _Checker(program).run()
