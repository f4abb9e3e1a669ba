from __future__ import annotations

import re
from dataclasses import dataclass

from ..errors import LexError

KEYWORDS = {"and": "AND", "or": "OR", "not": "NOT", "true": "BOOL", "false": "BOOL"}

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>-?\d+(?:\.\d+)?)(?P<unit>%|[A-Za-z][A-Za-z0-9]*(?:/[A-Za-z0-9]+)*)?
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<cmp><=|>=|==|!=|<|>)
  | (?P<lparen>\()
  | (?P<rparen>\))
  | (?P<string>")
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    type: str
    text: str
    pos: int
    unit: str = ""


def _read_string(source: str, start: int) -> tuple[str, int]:
    out = []
    i = start + 1
    while i < len(source):
        ch = source[i]
        if ch == "\\":
            if i + 1 >= len(source):
                break
            nxt = source[i + 1]
            if nxt not in ('"', "\\"):
                raise LexError(i, f"unsupported escape \\{nxt}")
            out.append(nxt)
            i += 2
            continue
        if ch == '"':
            return "".join(out), i + 1
        out.append(ch)
        i += 1
    raise LexError(start, "unterminated string literal")


def tokenize(source: str) -> list[Token]:
    tokens: list[Token] = []
    pos = 0
    while pos < len(source):
        m = _TOKEN.match(source, pos)
        if not m:
            raise LexError(pos)
        kind = m.lastgroup
        if kind == "unit":
            kind = "number"
        if kind == "ws":
            pos = m.end()
            continue
        if kind == "string":
            text, end = _read_string(source, pos)
            tokens.append(Token("STRING", text, pos))
            pos = end
            continue
        text = m.group(kind)
        if kind == "number":
            tokens.append(Token("NUMBER", m.group("number"), pos, m.group("unit") or ""))
        elif kind == "ident":
            tokens.append(Token(KEYWORDS.get(text.lower(), "IDENT"), text, pos))
        else:
            tokens.append(Token(kind.upper(), text, pos))
        pos = m.end()
    tokens.append(Token("EOF", "", len(source)))
    return tokens
