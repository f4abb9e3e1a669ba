"""Reference evaluator used to cross-check ``evaluate``.

Deliberately shares no logic with the production evaluator: connectives
are looked up in explicit truth tables, numbers are compared as
``Fraction``s, and n-ary nodes are folded pairwise.
"""

from __future__ import annotations

from fractions import Fraction
from functools import reduce

from ..errors import RuleTypeError, UnitMismatch
from ..values import FactValue, TruthValue, normalize_unit
from .ast import And, Cmp, FactRef, Literal, Not, Or, RuleExpr

T, F, U = TruthValue.TRUE, TruthValue.FALSE, TruthValue.UNKNOWN

AND_TABLE = {
    (T, T): T, (T, F): F, (T, U): U,
    (F, T): F, (F, F): F, (F, U): F,
    (U, T): U, (U, F): F, (U, U): U,
}
OR_TABLE = {
    (T, T): T, (T, F): T, (T, U): T,
    (F, T): T, (F, F): F, (F, U): U,
    (U, T): T, (U, F): U, (U, U): U,
}
NOT_TABLE = {T: F, F: T, U: U}

_CMP_TABLE = {
    "<": lambda a, b: a < b,
    "<=": lambda a, b: not b < a,
    ">": lambda a, b: b < a,
    ">=": lambda a, b: not a < b,
    "==": lambda a, b: a == b,
    "!=": lambda a, b: not a == b,
}


def _lookup(ref: FactRef, bindings) -> FactValue | None:
    value = bindings.get(ref.fact_id)
    if value is None or value.kind == "unknown":
        return None
    return value


def _operand(node, bindings):
    """Return (kind, comparable, unit, name) or None for Unknown."""
    if isinstance(node, FactRef):
        value = _lookup(node, bindings)
        if value is None:
            return None
        declared = normalize_unit(node.unit) if node.unit else ""
        unit = normalize_unit(value.unit) if value.kind == "num" else ""
        if value.kind == "num" and declared and unit and unit != declared:
            raise UnitMismatch(node.fact_id, unit, declared)
        name = node.fact_id
    else:
        value = node.value
        declared = ""
        unit = normalize_unit(value.unit) if value.kind == "num" else ""
        name = None
    if value.kind == "num":
        return "num", Fraction(str(value.value)), unit or declared, name
    if value.kind == "enum":
        return "enum", value.value.strip().casefold(), "", name
    return "bool", bool(value.value), "", name


def brute_force_oracle(expr: RuleExpr, bindings) -> TruthValue:
    if isinstance(expr, And):
        return reduce(lambda acc, c: AND_TABLE[acc, brute_force_oracle(c, bindings)], expr.children, T)
    if isinstance(expr, Or):
        return reduce(lambda acc, c: OR_TABLE[acc, brute_force_oracle(c, bindings)], expr.children, F)
    if isinstance(expr, Not):
        return NOT_TABLE[brute_force_oracle(expr.child, bindings)]
    if isinstance(expr, FactRef):
        value = _lookup(expr, bindings)
        if value is None:
            return U
        if value.kind != "bool":
            raise RuleTypeError(expr.fact_id, "boolean")
        return {True: T, False: F}[value.value]
    if isinstance(expr, Literal):
        if expr.value.kind != "bool":
            raise RuleTypeError(expr.value.render(), "boolean literal")
        return {True: T, False: F}[expr.value.value]
    if isinstance(expr, Cmp):
        left = _operand(expr.lhs, bindings)
        right = _operand(expr.rhs, bindings)
        if left is None or right is None:
            return U
        lkind, lval, lunit, lname = left
        rkind, rval, runit, rname = right
        name = lname or rname or "literal"
        if lkind != rkind:
            raise RuleTypeError(name, f"{lkind} on both sides")
        if lkind == "num" and lunit and runit and lunit != runit:
            raise UnitMismatch(name, lunit, runit)
        if lkind != "num" and expr.op not in ("==", "!="):
            raise RuleTypeError(name, "numeric operands for an ordering comparison")
        return {True: T, False: F}[_CMP_TABLE[expr.op](lval, rval)]
    raise TypeError(f"not a rule node: {expr!r}")
