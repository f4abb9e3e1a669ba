"""Symbolic rule language: parsing, printing and three-valued evaluation."""

from .ast import (
    CMP_OPS,
    And,
    Cmp,
    FactRef,
    Literal,
    Not,
    Or,
    RuleExpr,
    depth,
    fact_refs,
    to_canonical_string,
    walk,
)
from .evaluate import Bindings, evaluate, final_answer
from .lexer import tokenize
from .oracle import brute_force_oracle
from .parser import parse_rule
from .usage import Usage, infer_answer_sets, lint

__all__ = [
    "And", "Bindings", "CMP_OPS", "Cmp", "FactRef", "Literal", "Not", "Or", "RuleExpr",
    "brute_force_oracle", "depth", "evaluate", "fact_refs", "final_answer",
    "Usage", "infer_answer_sets", "lint", "parse_rule", "to_canonical_string", "tokenize", "walk",
]
