"""Hand-rolled lexer.  Produces a flat token list; malformed input yields
error Diagnostics instead of exceptions so the parser can keep going."""

from __future__ import annotations

from dataclasses import dataclass

from .ast import Diagnostic, Span

KEYWORDS = frozenset(
    [
        "import",
        "function",
        "action",
        "api",
        "let",
        "return",
        "yield",
        "match",
        "true",
        "false",
        "none",
    ]
)

# Longest first so that e.g. "==" wins over "=".
PUNCT = (
    "::",
    "=>",
    "==",
    "!=",
    "<=",
    ">=",
    "(",
    ")",
    "{",
    "}",
    "<",
    ">",
    ",",
    ";",
    ":",
    ".",
    "=",
    "+",
    "-",
    "*",
    "/",
    "_",
)

STRING_ESCAPES = {"\\": "\\", '"': '"', "n": "\n", "t": "\t", "r": "\r", "0": "\0"}


@dataclass(frozen=True)
class Token:
    kind: str  # "ident" | "keyword" | "int" | "string" | "bytes" | "punct" | "eof"
    text: str
    value: object
    span: Span


def lex(text: str) -> tuple[list[Token], list[Diagnostic]]:
    tokens: list[Token] = []
    diags: list[Diagnostic] = []
    i = 0
    line = 1
    col = 1
    n = len(text)

    def span(start_col: int, length: int) -> Span:
        return Span(line, start_col, length)

    while i < n:
        c = text[i]
        if c == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if c in " \t\r":
            i += 1
            col += 1
            continue
        if text.startswith("//", i):
            while i < n and text[i] != "\n":
                i += 1
            continue
        start_col = col
        if c.isalpha():
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            word = text[i:j]
            kind = "keyword" if word in KEYWORDS else "ident"
            value: object = word
            if word == "true":
                value = True
            elif word == "false":
                value = False
            elif word == "none":
                value = None
            tokens.append(Token(kind, word, value, span(start_col, j - i)))
            col += j - i
            i = j
            continue
        if c.isdigit():
            if text.startswith('0x"', i):
                j = text.find('"', i + 3)
                if j < 0:
                    diags.append(Diagnostic("error", "unterminated bytes literal", span(start_col, n - i)))
                    i = n
                    break
                hexpart = text[i + 3 : j]
                try:
                    value = bytes.fromhex(hexpart)
                except ValueError:
                    diags.append(Diagnostic("error", "malformed bytes literal", span(start_col, j + 1 - i)))
                    value = b""
                tokens.append(Token("bytes", text[i : j + 1], value, span(start_col, j + 1 - i)))
                col += j + 1 - i
                i = j + 1
                continue
            j = i
            while j < n and text[j].isdigit():
                j += 1
            tokens.append(Token("int", text[i:j], int(text[i:j]), span(start_col, j - i)))
            col += j - i
            i = j
            continue
        if c == '"':
            j = i + 1
            out: list[str] = []
            ok = True
            while True:
                if j >= n or text[j] == "\n":
                    diags.append(Diagnostic("error", "unterminated string literal", span(start_col, j - i)))
                    ok = False
                    break
                ch = text[j]
                if ch == '"':
                    j += 1
                    break
                if ch == "\\":
                    if j + 1 >= n or text[j + 1] not in STRING_ESCAPES:
                        diags.append(Diagnostic("error", "unknown string escape", Span(line, start_col + (j - i), 2)))
                        ok = False
                        j += 1
                        continue
                    out.append(STRING_ESCAPES[text[j + 1]])
                    j += 2
                    continue
                out.append(ch)
                j += 1
            if ok:
                tokens.append(Token("string", text[i:j], "".join(out), span(start_col, j - i)))
            col += j - i
            i = j
            continue
        for p in PUNCT:
            if text.startswith(p, i):
                tokens.append(Token("punct", p, p, span(start_col, len(p))))
                col += len(p)
                i += len(p)
                break
        else:
            diags.append(Diagnostic("error", f"unexpected character {c!r}", span(start_col, 1)))
            i += 1
            col += 1
    tokens.append(Token("eof", "", None, Span(line, col, 0)))
    return tokens, diags
