"""Kleene strong three-valued evaluation of bound rule ASTs."""

from __future__ import annotations

import operator
from typing import Mapping, Sequence

from ..errors import RuleTypeError, UnitMismatch
from ..values import UNKNOWN, FactValue, Kind, TruthValue, normalize_unit, units_compatible
from .ast import And, Cmp, FactRef, Literal, Not, Operand, Or, RuleExpr

Bindings = Mapping[str, FactValue]

T, F, U = TruthValue.TRUE, TruthValue.FALSE, TruthValue.UNKNOWN

_VALUE_KIND = {Kind.BOOLEAN: "bool", Kind.NUMERIC: "num", Kind.ENUM: "enum"}
_ORDER = {
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
    "==": operator.eq,
    "!=": operator.ne,
}


def _bound(ref: FactRef, b: Bindings) -> FactValue:
    value = b.get(ref.fact_id, UNKNOWN)
    if value.is_unknown or ref.kind is None:
        return value
    if value.kind != _VALUE_KIND[ref.kind]:
        raise RuleTypeError(ref.fact_id, ref.kind.value)
    if value.kind == "num" and not units_compatible(value.unit, ref.unit or ""):
        raise UnitMismatch(ref.fact_id, value.unit, ref.unit or "")
    return value


def _resolve(o: Operand, b: Bindings) -> tuple[FactValue, str | None]:
    if isinstance(o, FactRef):
        return _bound(o, b), o.fact_id
    return o.value, None


def _compare(cmp: Cmp, b: Bindings) -> TruthValue:
    lhs, lname = _resolve(cmp.lhs, b)
    rhs, rname = _resolve(cmp.rhs, b)
    if lhs.is_unknown or rhs.is_unknown:
        return U
    name = lname or rname or lhs.render()
    if lhs.kind != rhs.kind:
        raise RuleTypeError(name, f"{lhs.kind} on both sides")
    if lhs.kind == "num":
        lu = normalize_unit(lhs.unit) or _declared(cmp.lhs)
        ru = normalize_unit(rhs.unit) or _declared(cmp.rhs)
        if lu and ru and lu != ru:
            raise UnitMismatch(name, lu if lname else ru, ru if lname else lu)
        return TruthValue.of(_ORDER[cmp.op](lhs.value, rhs.value))
    if cmp.op not in ("==", "!="):
        raise RuleTypeError(name, "numeric operands for an ordering comparison")
    if lhs.kind == "enum":
        same = lhs.value.strip().casefold() == rhs.value.strip().casefold()
    else:
        same = lhs.value == rhs.value
    return TruthValue.of(same if cmp.op == "==" else not same)


def _declared(o: Operand) -> str:
    if isinstance(o, FactRef) and o.unit:
        return normalize_unit(o.unit)
    return ""


def evaluate(expr: RuleExpr, b: Bindings) -> TruthValue:
    """Evaluate ``expr`` under ``b``; missing bindings read as Unknown."""
    if isinstance(expr, And):
        result = T
        for child in expr.children:
            v = evaluate(child, b)
            if v is F:
                return F
            if v is U:
                result = U
        return result
    if isinstance(expr, Or):
        result = F
        for child in expr.children:
            v = evaluate(child, b)
            if v is T:
                return T
            if v is U:
                result = U
        return result
    if isinstance(expr, Not):
        v = evaluate(expr.child, b)
        return U if v is U else (F if v is T else T)
    if isinstance(expr, Cmp):
        return _compare(expr, b)
    if isinstance(expr, FactRef):
        value = _bound(expr, b)
        if value.is_unknown:
            return U
        if value.kind != "bool":
            raise RuleTypeError(expr.fact_id, "boolean")
        return TruthValue.of(value.value)
    if isinstance(expr, Literal):
        if expr.value.kind != "bool":
            raise RuleTypeError(expr.value.render(), "boolean literal")
        return TruthValue.of(expr.value.value)
    raise TypeError(f"not a rule node: {expr!r}")


def final_answer(values: Sequence[TruthValue]) -> tuple[bool, bool]:
    """Conjoin top-level rule values; returns ``(answer, definite)``.

    Unknown collapses to a negative answer flagged as indefinite.
    """
    if not values:
        raise ValueError("final_answer needs at least one rule value")
    if any(v is F for v in values):
        return False, True
    if any(v is U for v in values):
        return False, False
    return True, True
