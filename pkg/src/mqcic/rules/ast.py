"""Immutable AST for symbolic logical rules."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterator, Union

from ..values import FactValue, Kind

CMP_OPS = ("<", "<=", ">", ">=", "==", "!=")
ORDERING_OPS = ("<", "<=", ">", ">=")


@dataclass(frozen=True)
class FactRef:
    fact_id: str
    # Filled in when the rule is bound to templates; None for a syntax-only parse.
    kind: Kind | None = None
    unit: str | None = None


@dataclass(frozen=True)
class Literal:
    value: FactValue


@dataclass(frozen=True)
class Not:
    child: "RuleExpr"


@dataclass(frozen=True)
class And:
    children: tuple["RuleExpr", ...]


@dataclass(frozen=True)
class Or:
    children: tuple["RuleExpr", ...]


@dataclass(frozen=True)
class Cmp:
    op: str
    lhs: "Operand"
    rhs: "Operand"


Operand = Union[FactRef, Literal]
RuleExpr = Union[Or, And, Not, Cmp, FactRef, Literal]


def walk(expr: RuleExpr) -> Iterator[RuleExpr]:
    stack = [expr]
    while stack:
        node = stack.pop()
        yield node
        if isinstance(node, (And, Or)):
            stack.extend(reversed(node.children))
        elif isinstance(node, Not):
            stack.append(node.child)
        elif isinstance(node, Cmp):
            stack.append(node.rhs)
            stack.append(node.lhs)


def fact_refs(expr: RuleExpr) -> list[str]:
    """Fact ids in first-occurrence order."""
    seen: dict[str, None] = {}
    for node in walk(expr):
        if isinstance(node, FactRef):
            seen.setdefault(node.fact_id)
    return list(seen)


def depth(expr: RuleExpr) -> int:
    """Number of levels; a bare leaf has depth 1."""
    if isinstance(expr, (And, Or)):
        return 1 + max(depth(c) for c in expr.children)
    if isinstance(expr, Not):
        return 1 + depth(expr.child)
    if isinstance(expr, Cmp):
        return 2
    return 1


def _literal_text(value: FactValue) -> str:
    if value.kind == "bool":
        return "true" if value.value else "false"
    if value.kind == "num":
        return f"{value.value}{value.unit}"
    return json.dumps(value.value, ensure_ascii=False)


def to_canonical_string(expr: RuleExpr) -> str:
    """Fully parenthesized, single-space-separated form that re-parses to an equal tree."""
    if isinstance(expr, FactRef):
        return expr.fact_id
    if isinstance(expr, Literal):
        return _literal_text(expr.value)
    if isinstance(expr, Not):
        return f"(NOT {to_canonical_string(expr.child)})"
    if isinstance(expr, Cmp):
        return f"({to_canonical_string(expr.lhs)} {expr.op} {to_canonical_string(expr.rhs)})"
    joiner = " AND " if isinstance(expr, And) else " OR "
    return "(" + joiner.join(to_canonical_string(c) for c in expr.children) + ")"
