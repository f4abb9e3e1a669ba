"""Exception hierarchy.

Everything raised deliberately by the package derives from ``MqcicError`` so
the CLI can map domain failures to exit code 1 in one place.
"""

from __future__ import annotations


class MqcicError(Exception):
    """Base class for all domain errors."""


# --- corpus / schema -------------------------------------------------------


class SchemaError(MqcicError):
    def __init__(self, field: str, reason: str, record: int | None = None):
        self.field = field
        self.reason = reason
        self.record = record
        where = f" (record {record})" if record is not None else ""
        super().__init__(f"{field}: {reason}{where}")


class DataIOError(MqcicError):
    """A corpus file could not be read or decoded."""


class EmptyCorpus(MqcicError):
    pass


# --- rule DSL ----------------------------------------------------------------


class RuleError(MqcicError):
    """Base for rule-language failures."""


class LexError(RuleError):
    def __init__(self, position: int, message: str = "unexpected character"):
        self.position = position
        super().__init__(f"{message} at position {position}")


class ParseError(RuleError):
    def __init__(self, position: int, expected: str, found: str = ""):
        self.position = position
        self.expected = expected
        self.found = found
        got = f", found {found!r}" if found else ""
        super().__init__(f"expected {expected} at position {position}{got}")


class UnknownFact(RuleError):
    def __init__(self, fact_id: str):
        self.fact_id = fact_id
        super().__init__(f"unknown fact {fact_id!r}")


class RuleTypeError(RuleError):
    def __init__(self, fact_id: str, expected: str):
        self.fact_id = fact_id
        self.expected = expected
        super().__init__(f"type error on {fact_id!r}: expected {expected}")


class UnitMismatch(RuleError):
    def __init__(self, fact_id: str, unit: str = "", declared: str = ""):
        self.fact_id = fact_id
        self.unit = unit
        self.declared = declared
        super().__init__(
            f"unit {unit!r} of {fact_id!r} does not normalize to declared unit {declared!r}"
        )


class EmptyRuleSet(RuleError):
    pass


# --- gateway -----------------------------------------------------------------


class GatewayError(MqcicError):
    pass


class BackendError(GatewayError):
    def __init__(self, status: int | None, body: str = ""):
        self.status = status
        self.body = body
        super().__init__(f"backend error (status={status}): {body[:200]}")


class FixtureMiss(GatewayError):
    def __init__(self, key: str):
        self.key = key
        super().__init__(f"no fixture recorded for cache key {key}")


class UnparseableJudgment(GatewayError):
    def __init__(self, raw: str):
        self.raw = raw
        super().__init__(f"judge output is not 0/1: {raw[:120]!r}")


class ConfigError(MqcicError):
    pass


# --- enhancement -------------------------------------------------------------


class EnhancementError(MqcicError):
    pass


class DecompositionError(EnhancementError):
    pass


class DecompositionUnparseable(DecompositionError):
    def __init__(self, entry: str, error: str):
        self.entry = entry
        self.error = error
        super().__init__(f"unusable symbolic rule {entry!r}: {error}")


class UncoveredFact(EnhancementError):
    def __init__(self, fact_id: str):
        self.fact_id = fact_id
        super().__init__(f"no template covers fact {fact_id!r}")


class KindConflict(EnhancementError):
    def __init__(self, fact_id: str, detail: str = ""):
        self.fact_id = fact_id
        self.detail = detail
        super().__init__(f"conflicting answer kinds for {fact_id!r}" + (f": {detail}" if detail else ""))


class EnhancementStepError(EnhancementError):
    def __init__(self, step: str, cause: Exception):
        self.step = step
        self.cause = cause
        super().__init__(f"enhancement step {step!r} failed: {cause}")


class ReviewError(EnhancementError):
    pass


class InvalidEdit(ReviewError):
    def __init__(self, reason: str):
        self.reason = reason
        super().__init__(f"invalid edit: {reason}")


# --- evaluation --------------------------------------------------------------


class EmptySet(MqcicError):
    pass


class JudgeUnavailable(MqcicError):
    """The judge backend failed; the affected score is a coverage gap."""
