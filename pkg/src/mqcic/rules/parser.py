"""Recursive-descent parser for symbolic rules.

Grammar (keywords case-insensitive)::

    expr     := and_expr ("OR" and_expr)*
    and_expr := not_expr ("AND" not_expr)*
    not_expr := "NOT" not_expr | primary
    primary  := "(" expr ")" | operand (CMP operand)?
    operand  := IDENT | NUMBER[unit] | STRING | "true" | "false"

Comparisons therefore bind tighter than NOT, NOT tighter than AND, AND
tighter than OR.  Parentheses never produce nodes of their own.
"""

from __future__ import annotations

from typing import Iterable

from ..errors import ParseError, RuleTypeError, UnknownFact
from ..values import FactValue, Kind, TemplatedFact, units_compatible
from .ast import ORDERING_OPS, And, Cmp, FactRef, Literal, Not, Operand, Or, RuleExpr
from .lexer import Token, tokenize

_LITERAL_KIND = {"bool": Kind.BOOLEAN, "num": Kind.NUMERIC, "enum": Kind.ENUM}


class _Parser:
    def __init__(self, source: str, facts: dict[str, TemplatedFact] | None):
        self.tokens = tokenize(source)
        self.i = 0
        self.facts = facts

    @property
    def tok(self) -> Token:
        return self.tokens[self.i]

    def advance(self) -> Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, type_: str, what: str) -> Token:
        if self.tok.type != type_:
            raise ParseError(self.tok.pos, what, self.tok.text or "end of input")
        return self.advance()

    def parse(self) -> RuleExpr:
        expr = self.or_expr()
        if self.tok.type != "EOF":
            raise ParseError(self.tok.pos, "AND, OR or end of input", self.tok.text)
        self.check_boolean(expr)
        return expr

    def or_expr(self) -> RuleExpr:
        children = [self.and_expr()]
        while self.tok.type == "OR":
            self.advance()
            children.append(self.and_expr())
        return children[0] if len(children) == 1 else Or(tuple(children))

    def and_expr(self) -> RuleExpr:
        children = [self.not_expr()]
        while self.tok.type == "AND":
            self.advance()
            children.append(self.not_expr())
        return children[0] if len(children) == 1 else And(tuple(children))

    def not_expr(self) -> RuleExpr:
        if self.tok.type == "NOT":
            self.advance()
            return Not(self.not_expr())
        return self.primary()

    def primary(self) -> RuleExpr:
        if self.tok.type == "LPAREN":
            self.advance()
            inner = self.or_expr()
            self.expect("RPAREN", "')'")
            return inner
        lhs = self.operand()
        if self.tok.type == "CMP":
            op = self.advance().text
            rhs = self.operand()
            cmp = Cmp(op, lhs, rhs)
            self.check_cmp(cmp)
            return cmp
        return lhs

    def operand(self) -> Operand:
        tok = self.tok
        if tok.type == "IDENT":
            self.advance()
            return self.ref(tok.text)
        if tok.type == "NUMBER":
            self.advance()
            return Literal(FactValue.num(tok.text, tok.unit))
        if tok.type == "STRING":
            self.advance()
            return Literal(FactValue.enum(tok.text))
        if tok.type == "BOOL":
            self.advance()
            return Literal(FactValue.bool(tok.text.lower() == "true"))
        raise ParseError(tok.pos, "fact, literal or '('", tok.text or "end of input")

    def ref(self, fact_id: str) -> FactRef:
        if self.facts is None:
            return FactRef(fact_id)
        fact = self.facts.get(fact_id)
        if fact is None:
            raise UnknownFact(fact_id)
        unit = fact.answer_set.unit if fact.kind is Kind.NUMERIC else None
        return FactRef(fact_id, fact.kind, unit)

    # --- typing ---------------------------------------------------------------

    def check_boolean(self, expr: RuleExpr) -> None:
        if isinstance(expr, (And, Or)):
            for child in expr.children:
                self.check_boolean(child)
        elif isinstance(expr, Not):
            self.check_boolean(expr.child)
        elif isinstance(expr, FactRef):
            if expr.kind is not None and expr.kind is not Kind.BOOLEAN:
                raise RuleTypeError(expr.fact_id, "boolean fact in a logical position")
        elif isinstance(expr, Literal) and expr.value.kind != "bool":
            raise RuleTypeError(expr.value.render(), "boolean literal in a logical position")

    def check_cmp(self, cmp: Cmp) -> None:
        ordering = cmp.op in ORDERING_OPS
        ref = next((o for o in (cmp.lhs, cmp.rhs) if isinstance(o, FactRef)), None)
        name = ref.fact_id if ref else cmp.lhs.value.render()
        kinds = [_operand_kind(o) for o in (cmp.lhs, cmp.rhs)]
        known = [k for k in kinds if k is not None]
        if ordering and any(k is not Kind.NUMERIC for k in known):
            raise RuleTypeError(name, "numeric operands for an ordering comparison")
        if len(known) == 2 and known[0] is not known[1]:
            raise RuleTypeError(name, f"{known[0].value} on both sides")
        if ref is None or ref.kind is None:
            return
        fact = self.facts[ref.fact_id]
        for other in (cmp.lhs, cmp.rhs):
            if not isinstance(other, Literal):
                continue
            if fact.kind is Kind.ENUM:
                allowed = {v.casefold() for v in fact.answer_set.values}
                if other.value.value.casefold() not in allowed:
                    raise RuleTypeError(ref.fact_id, "one of " + ", ".join(fact.answer_set.values))
            elif fact.kind is Kind.NUMERIC and not units_compatible(other.value.unit, fact.answer_set.unit):
                raise RuleTypeError(ref.fact_id, f"numeric in {fact.answer_set.unit or 'no unit'}")


def _operand_kind(o: Operand) -> Kind | None:
    if isinstance(o, FactRef):
        return o.kind
    return _LITERAL_KIND[o.value.kind]


def _fact_map(facts: Iterable[TemplatedFact] | None) -> dict[str, TemplatedFact] | None:
    if facts is None:
        return None
    return {f.fact_id: f for f in facts}


def parse_rule(source: str, facts: Iterable[TemplatedFact] | None = None) -> RuleExpr:
    """Parse ``source``; bind and type-check fact references when ``facts`` is given."""
    if not source or not source.strip():
        raise ParseError(0, "a non-empty rule")
    return _Parser(source, _fact_map(facts)).parse()
