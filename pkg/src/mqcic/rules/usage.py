"""Infer each fact's answer kind from how rules use it."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

from ..errors import KindConflict
from ..values import Kind, normalize_unit
from .ast import ORDERING_OPS, And, Cmp, FactRef, Literal, Not, Or, RuleExpr, fact_refs

_LITERAL_KIND = {"bool": Kind.BOOLEAN, "num": Kind.NUMERIC, "enum": Kind.ENUM}


@dataclass
class Usage:
    kind: Kind | None = None
    unit: str = ""
    values: list[str] = field(default_factory=list)


def _note(usages: dict[str, Usage], fid: str, kind: Kind, detail: str) -> Usage:
    u = usages.setdefault(fid, Usage())
    if u.kind is not None and u.kind is not kind:
        raise KindConflict(fid, f"used as {u.kind.value} and as {kind.value} ({detail})")
    u.kind = kind
    return u


def _visit(expr: RuleExpr, usages: dict[str, Usage], links: list[tuple[str, str]]) -> None:
    if isinstance(expr, (And, Or)):
        for c in expr.children:
            _visit(c, usages, links)
    elif isinstance(expr, Not):
        _visit(expr.child, usages, links)
    elif isinstance(expr, FactRef):
        _note(usages, expr.fact_id, Kind.BOOLEAN, "bare reference")
    elif isinstance(expr, Cmp):
        refs = [o for o in (expr.lhs, expr.rhs) if isinstance(o, FactRef)]
        lits = [o for o in (expr.lhs, expr.rhs) if isinstance(o, Literal)]
        for ref in refs:
            usages.setdefault(ref.fact_id, Usage())
        if expr.op in ORDERING_OPS:
            for ref in refs:
                _note(usages, ref.fact_id, Kind.NUMERIC, f"operand of {expr.op}")
        for ref in refs:
            for lit in lits:
                kind = _LITERAL_KIND[lit.value.kind]
                u = _note(usages, ref.fact_id, kind, f"compared with {lit.value.render()}")
                if kind is Kind.NUMERIC and lit.value.unit:
                    unit = normalize_unit(lit.value.unit)
                    if u.unit and u.unit != unit:
                        raise KindConflict(ref.fact_id, f"units {u.unit!r} and {unit!r}")
                    u.unit = unit
                elif kind is Kind.ENUM and lit.value.value not in u.values:
                    u.values.append(lit.value.value)
        if len(refs) == 2:
            links.append((refs[0].fact_id, refs[1].fact_id))


def infer_answer_sets(exprs: Iterable[RuleExpr]) -> dict[str, Usage]:
    """Usage per referenced fact; raises ``KindConflict`` on inconsistent use."""
    usages: dict[str, Usage] = {}
    links: list[tuple[str, str]] = []
    for expr in exprs:
        _visit(expr, usages, links)
    # fact-vs-fact comparisons share a kind; propagate to a fixed point
    changed = True
    while changed:
        changed = False
        for a, b in links:
            ka, kb = usages[a].kind, usages[b].kind
            if ka is not None and kb is not None and ka is not kb:
                raise KindConflict(a, f"compared with {b} of kind {kb.value}")
            if ka is None and kb is not None:
                usages[a].kind = kb
                changed = True
            elif kb is None and ka is not None:
                usages[b].kind = ka
                changed = True
    return usages


def lint(expr: RuleExpr) -> str | None:
    """Reason a rule is vacuous, or None if it is acceptable."""
    if isinstance(expr, Literal):
        return "rule is a bare literal"
    if not fact_refs(expr):
        return "rule references no facts"
    return None
