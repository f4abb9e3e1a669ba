"""Value types shared by the corpus model and the rule language."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from typing import Any


class TruthValue(enum.Enum):
    TRUE = "True"
    FALSE = "False"
    UNKNOWN = "Unknown"

    @classmethod
    def of(cls, value: bool | None) -> "TruthValue":
        if value is None:
            return cls.UNKNOWN
        return cls.TRUE if value else cls.FALSE

    @property
    def definite(self) -> bool:
        return self is not TruthValue.UNKNOWN

    def __str__(self) -> str:
        return self.value


class Kind(str, enum.Enum):
    BOOLEAN = "boolean"
    NUMERIC = "numeric"
    ENUM = "enum"


# Opaque unit strings are compared after this alias table; nothing is rescaled.
_UNIT_ALIASES = {
    "%": "%",
    "percent": "%",
    "pct": "%",
    "mg": "mg",
    "g": "g",
    "mmhg": "mmHg",
    "score": "",
    "scores": "",
    "point": "",
    "points": "",
    "pts": "",
    "分": "",
}


def normalize_unit(unit: str | None) -> str:
    if not unit:
        return ""
    u = unit.strip()
    return _UNIT_ALIASES.get(u.casefold(), u)


def units_compatible(unit: str, declared: str) -> bool:
    """A unitless value is read in the declared unit."""
    u = normalize_unit(unit)
    return u == "" or u == normalize_unit(declared)


def known_unit(unit: str) -> bool:
    return unit.strip().casefold() in _UNIT_ALIASES


@dataclass(frozen=True)
class AnswerSet:
    kind: Kind
    unit: str = ""
    values: tuple[str, ...] = ()

    def __post_init__(self):
        if self.kind is Kind.ENUM and len(set(self.values)) < 2:
            raise ValueError("enum answer sets need at least two distinct values")

    @classmethod
    def boolean(cls) -> "AnswerSet":
        return cls(Kind.BOOLEAN)

    @classmethod
    def numeric(cls, unit: str = "") -> "AnswerSet":
        return cls(Kind.NUMERIC, unit=normalize_unit(unit))

    @classmethod
    def enum(cls, values) -> "AnswerSet":
        return cls(Kind.ENUM, values=tuple(values))

    def to_json(self) -> dict[str, Any]:
        if self.kind is Kind.NUMERIC:
            return {"type": "numeric", "unit": self.unit}
        if self.kind is Kind.ENUM:
            return {"type": "enum", "values": list(self.values)}
        return {"type": "boolean"}

    @classmethod
    def from_json(cls, data: Any) -> "AnswerSet":
        if isinstance(data, str):
            data = {"type": data}
        if not isinstance(data, dict):
            raise ValueError("answer_set must be an object")
        kind = str(data.get("type", "")).strip().lower()
        if kind in ("boolean", "bool"):
            return cls.boolean()
        if kind in ("numeric", "number", "num"):
            return cls.numeric(str(data.get("unit") or ""))
        if kind == "enum":
            values = data.get("values")
            if not isinstance(values, list) or not all(isinstance(v, str) for v in values):
                raise ValueError("enum answer set needs a list of string values")
            return cls.enum(values)
        raise ValueError(f"unknown answer set type {kind!r}")

    def describe(self) -> str:
        if self.kind is Kind.NUMERIC:
            return f"number in {self.unit}" if self.unit else "number"
        if self.kind is Kind.ENUM:
            return "one of " + ", ".join(self.values)
        return "True or False"


@dataclass(frozen=True)
class FactValue:
    """Typed result of verifying one templated fact.

    ``kind`` is one of ``"bool"``, ``"num"``, ``"enum"`` or ``"unknown"``.
    """

    kind: str
    value: Any = None
    unit: str = field(default="")

    @classmethod
    def bool(cls, value: bool) -> "FactValue":
        return cls("bool", bool(value))

    @classmethod
    def num(cls, value, unit: str = "") -> "FactValue":
        return cls("num", to_decimal(value), normalize_unit(unit))

    @classmethod
    def enum(cls, value: str) -> "FactValue":
        return cls("enum", str(value))

    @property
    def is_unknown(self) -> bool:
        return self.kind == "unknown"

    def render(self) -> str:
        if self.kind == "bool":
            return "True" if self.value else "False"
        if self.kind == "num":
            return f"{self.value}{self.unit}"
        if self.kind == "enum":
            return self.value
        return "Not sure"

    def to_json(self) -> Any:
        if self.kind == "bool":
            return self.value
        if self.kind == "num":
            return {"value": str(self.value), "unit": self.unit}
        if self.kind == "enum":
            return self.value
        return None

    @classmethod
    def from_json(cls, data: Any) -> "FactValue":
        """Decode the loose on-disk form; typing against a template happens in ``coerce``."""
        if data is None:
            return UNKNOWN
        if isinstance(data, bool):
            return cls.bool(data)
        if isinstance(data, (int, float)):
            return cls.num(data)
        if isinstance(data, str):
            return cls.enum(data)
        if isinstance(data, dict) and "value" in data:
            return cls.num(data["value"], str(data.get("unit") or ""))
        raise ValueError(f"cannot decode fact value {data!r}")

    def same_as(self, other: "FactValue") -> bool:
        """Equality up to unit aliases and enum case."""
        if self.kind != other.kind:
            return False
        if self.kind == "num":
            return self.value == other.value and normalize_unit(self.unit) == normalize_unit(other.unit)
        if self.kind == "enum":
            return self.value.strip().casefold() == other.value.strip().casefold()
        return self.value == other.value


UNKNOWN = FactValue("unknown")

_UNSURE = {"not sure", "unknown", "unsure", "n/a", "na", "none", "不确定", "未知", "无法确定"}
_TRUE_WORDS = {"true", "yes", "是", "correct", "1"}
_FALSE_WORDS = {"false", "no", "否", "0"}
_NUMBER_WITH_UNIT = re.compile(r"^\s*(-?\d+(?:\.\d+)?)\s*(\S*)\s*$")


def to_decimal(value) -> Decimal:
    if isinstance(value, Decimal):
        return value
    if isinstance(value, float):
        return Decimal(repr(value))
    try:
        return Decimal(str(value).strip())
    except InvalidOperation as exc:
        raise ValueError(f"not a number: {value!r}") from exc


def coerce(value: FactValue, answer_set: AnswerSet) -> FactValue:
    """Type a loosely decoded value against its template; raise ValueError if impossible."""
    if value.is_unknown:
        return value
    if value.kind == "enum" and value.value.strip().casefold() in _UNSURE:
        return UNKNOWN
    kind = answer_set.kind
    if kind is Kind.BOOLEAN:
        if value.kind == "bool":
            return value
        if value.kind == "enum":
            word = value.value.strip().casefold()
            if word in _TRUE_WORDS:
                return FactValue.bool(True)
            if word in _FALSE_WORDS:
                return FactValue.bool(False)
        raise ValueError(f"{value.render()!r} is not a boolean")
    if kind is Kind.NUMERIC:
        if value.kind == "enum":
            m = _NUMBER_WITH_UNIT.match(value.value)
            if not m:
                raise ValueError(f"{value.value!r} is not numeric")
            value = FactValue.num(m.group(1), m.group(2))
        if value.kind != "num":
            raise ValueError(f"{value.render()!r} is not numeric")
        if not units_compatible(value.unit, answer_set.unit):
            raise ValueError(f"unit {value.unit!r} does not match {answer_set.unit!r}")
        return FactValue.num(value.value, answer_set.unit)
    if value.kind != "enum":
        raise ValueError(f"{value.render()!r} is not one of {answer_set.values}")
    for allowed in answer_set.values:
        if allowed.strip().casefold() == value.value.strip().casefold():
            return FactValue.enum(allowed)
    raise ValueError(f"{value.value!r} is not one of {answer_set.values}")


@dataclass(frozen=True)
class TemplatedFact:
    fact_id: str
    description: str
    answer_set: AnswerSet
    required: bool = True

    @property
    def kind(self) -> Kind:
        return self.answer_set.kind

    def to_json(self) -> dict[str, Any]:
        return {
            "fact_id": self.fact_id,
            "description": self.description,
            "answer_set": self.answer_set.to_json(),
            "required": self.required,
        }

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> "TemplatedFact":
        return cls(
            fact_id=str(data["fact_id"]),
            description=str(data.get("description", "")),
            answer_set=AnswerSet.from_json(data.get("answer_set", "boolean")),
            required=bool(data.get("required", True)),
        )
