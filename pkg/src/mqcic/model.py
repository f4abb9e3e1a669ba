"""Corpus types, schema validation and JSON file I/O.

Indicator files carry the indicator-table field names (``definition``,
``formula``, ... ``logical_rules``); instance files carry ``unique_id``,
``patient note`` (with a space), ``explaination``/``explanation``,
``label``, ``facts`` and ``logic``.  Fields we do not know are kept in
``extra`` and written back untouched.
"""

from __future__ import annotations

import enum
import json
import os
import re
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

from .errors import DataIOError, EmptyCorpus, RuleError, SchemaError
from .rules import fact_refs, parse_rule
from .values import FactValue, TemplatedFact, TruthValue, coerce

IDENTIFIER = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")

INDICATOR_FIELDS = (
    "definition",
    "formula",
    "significance",
    "other",
    "instruction_standard",
    "numerator",
    "denominator",
    "rule",
)
NOTE_KEY = "patient note"
EXPLANATION_KEYS = ("explaination", "explanation")


class Method(str, enum.Enum):
    STANDARD = "standard"
    COT = "cot"
    CFIR = "cfir"
    ACFIR = "acfir"


class ReasoningMode(str, enum.Enum):
    LLM_NL = "llm-nl"
    LLM_SY = "llm-sy"
    SYMBOLIC = "symbolic"


@dataclass(frozen=True)
class LogicalRuleSet:
    natural_language: tuple[str, ...] = ()
    symbolic: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.symbolic)

    def to_json(self) -> dict[str, list[str]]:
        return {"natural_language": list(self.natural_language), "symbolic": list(self.symbolic)}

    @classmethod
    def from_json(cls, data: Any) -> "LogicalRuleSet":
        if data is None:
            return cls()
        if isinstance(data, dict):
            nl = data.get("natural_language", data.get("natural", []))
            sy = data.get("symbolic", [])
        elif isinstance(data, list):
            # list of {"natural": ..., "symbolic": ...} pairs
            nl = [item.get("natural_language", item.get("natural", "")) for item in data]
            sy = [item.get("symbolic", "") for item in data]
        else:
            raise ValueError("logical_rules must be an object or a list")
        if not all(isinstance(x, str) for x in [*nl, *sy]):
            raise ValueError("logical rules must be strings")
        return cls(tuple(nl), tuple(sy))


@dataclass(frozen=True)
class Indicator:
    id: str
    rule: str
    definition: str = ""
    formula: str = ""
    significance: str = ""
    other: str = ""
    instruction_standard: str = ""
    numerator: str = ""
    denominator: str = ""
    facts: tuple[TemplatedFact, ...] = ()
    logical_rules: LogicalRuleSet = LogicalRuleSet()
    extra: dict[str, Any] = field(default_factory=dict, compare=True)

    @property
    def enhanced(self) -> bool:
        return bool(self.facts) and bool(self.logical_rules.symbolic)

    def fact(self, fact_id: str) -> TemplatedFact | None:
        for f in self.facts:
            if f.fact_id == fact_id:
                return f
        return None

    def parsed_rules(self):
        return [parse_rule(s, self.facts) for s in self.logical_rules.symbolic]

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"id": self.id}
        for name in INDICATOR_FIELDS:
            out[name] = getattr(self, name)
        out["facts"] = [f.to_json() for f in self.facts]
        out["logical_rules"] = self.logical_rules.to_json()
        out.update(self.extra)
        return out


@dataclass(frozen=True)
class GoldFact:
    fact_id: str
    original_text: str
    value: FactValue
    extra: dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> dict[str, Any]:
        return {"fact_id": self.fact_id, "original_text": self.original_text,
                "value": self.value.to_json(), **self.extra}


@dataclass(frozen=True)
class GoldLogic:
    rule_index: int
    value: TruthValue
    # the entry as it appeared in the source file, written back unchanged
    source: Any = field(default=None, compare=False)

    def to_json(self) -> Any:
        if self.source is not None:
            return self.source
        v = None if self.value is TruthValue.UNKNOWN else self.value is TruthValue.TRUE
        return {"rule_index": self.rule_index, "value": v}


@dataclass(frozen=True)
class PatientInstance:
    unique_id: str
    patient_note: str
    label: bool
    question: str = ""
    explanation: str = ""
    gold_facts: tuple[GoldFact, ...] = ()
    gold_logic: tuple[GoldLogic, ...] = ()
    extra: dict[str, Any] = field(default_factory=dict)
    # spelling of the explanation key in the source file, reused on write
    explanation_key: str = field(default="explanation", compare=False)
    # label as written in the source ("是", "yes", ...), reused on write
    raw_label: Any = field(default=None, compare=False)

    @property
    def gold_bindings(self) -> dict[str, FactValue]:
        return {g.fact_id: g.value for g in self.gold_facts}

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {"unique_id": self.unique_id, NOTE_KEY: self.patient_note}
        if self.question:
            out["question"] = self.question
        out[self.explanation_key] = self.explanation
        keep_raw = self.raw_label is not None and _label_or_none(self.raw_label) is self.label
        out["label"] = self.raw_label if keep_raw else self.label
        out["facts"] = [g.to_json() for g in self.gold_facts]
        out["logic"] = [g.to_json() for g in self.gold_logic]
        out.update(self.extra)
        return out


# --- generic I/O ---------------------------------------------------------------


def read_json(path: str | os.PathLike) -> Any:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise DataIOError(f"{path}: file not found") from exc
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataIOError(f"{path}: {exc}") from exc


def dumps(data: Any) -> str:
    return json.dumps(data, ensure_ascii=False, indent=2) + "\n"


def write_atomic(path: str | os.PathLike, text: str) -> None:
    """Write via a temp file in the same directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def write_json(path: str | os.PathLike, data: Any) -> None:
    write_atomic(path, dumps(data))


# --- labels ----------------------------------------------------------------------

_LABELS = {"true": True, "yes": True, "是": True, "false": False, "no": False, "否": False}


def _label_or_none(value: Any) -> bool | None:
    try:
        return normalize_label(value)
    except ValueError:
        return None


def normalize_label(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, str):
        key = value.strip().casefold()
        if key in _LABELS:
            return _LABELS[key]
    raise ValueError(f"unrecognized label {value!r}")


# --- indicators --------------------------------------------------------------------


def _text(record: dict, name: str, index: int, required: bool = False) -> str:
    if name not in record:
        if required:
            raise SchemaError(name, "missing", index)
        return ""
    value = record[name]
    if value is None:
        return ""
    if not isinstance(value, str):
        raise SchemaError(name, "must be a string", index)
    return value


def indicator_from_json(record: Any, index: int = 0) -> Indicator:
    if not isinstance(record, dict):
        raise SchemaError("<record>", "must be an object", index)
    ind_id = record.get("id")
    if not isinstance(ind_id, str) or not ind_id.strip():
        raise SchemaError("id", "missing" if ind_id is None else "must be a non-empty string", index)
    rule = _text(record, "rule", index, required=True)
    if not rule.strip():
        raise SchemaError("rule", "empty", index)

    facts = []
    seen = set()
    raw_facts = record.get("facts") or []
    if not isinstance(raw_facts, list):
        raise SchemaError("facts", "must be a list", index)
    for raw in raw_facts:
        if not isinstance(raw, dict) or "fact_id" not in raw:
            raise SchemaError("facts", "each fact needs a fact_id", index)
        try:
            fact = TemplatedFact.from_json(raw)
        except (ValueError, TypeError) as exc:
            raise SchemaError("facts", str(exc), index) from exc
        if not IDENTIFIER.match(fact.fact_id):
            raise SchemaError("facts", f"fact_id {fact.fact_id!r} is not an identifier", index)
        if fact.fact_id in seen:
            raise SchemaError("facts", f"duplicate fact_id {fact.fact_id!r}", index)
        seen.add(fact.fact_id)
        facts.append(fact)

    try:
        rules = LogicalRuleSet.from_json(record.get("logical_rules"))
    except (ValueError, AttributeError) as exc:
        raise SchemaError("logical_rules", str(exc), index) from exc
    if len(rules.natural_language) != len(rules.symbolic):
        raise SchemaError("logical_rules", "natural_language and symbolic lengths differ", index)
    for source in rules.symbolic:
        try:
            parse_rule(source, facts)
        except RuleError as exc:
            raise SchemaError("logical_rules", f"{source!r}: {exc}", index) from exc

    known = {"id", "facts", "logical_rules", *INDICATOR_FIELDS}
    return Indicator(
        id=ind_id,
        rule=rule,
        **{name: _text(record, name, index) for name in INDICATOR_FIELDS if name != "rule"},
        facts=tuple(facts),
        logical_rules=rules,
        extra={k: v for k, v in record.items() if k not in known},
    )


def parse_indicators(data: Any) -> list[Indicator]:
    if not isinstance(data, list):
        raise SchemaError("<file>", "indicator file must hold a JSON array")
    out = []
    seen = set()
    for i, record in enumerate(data):
        ind = indicator_from_json(record, i)
        if ind.id in seen:
            raise SchemaError("id", "duplicate", i)
        seen.add(ind.id)
        out.append(ind)
    return out


def load_indicators(path: str | os.PathLike) -> list[Indicator]:
    return parse_indicators(read_json(path))


def dump_indicators(indicators: Iterable[Indicator]) -> str:
    return dumps([ind.to_json() for ind in indicators])


# --- instances -------------------------------------------------------------------

_GOLD_ID_KEYS = ("fact_id", "fact", "name")
_GOLD_TEXT_KEYS = ("original_text", "text", "original")
_GOLD_VALUE_KEYS = ("value", "answer")


def _first(d: dict, keys: Sequence[str]) -> tuple[str | None, Any]:
    for k in keys:
        if k in d:
            return k, d[k]
    return None, None


def _gold_fact(raw: Any, index: int) -> GoldFact:
    if not isinstance(raw, dict):
        raise SchemaError("facts", "each gold fact must be an object", index)
    id_key, fid = _first(raw, _GOLD_ID_KEYS)
    if not isinstance(fid, str) or not fid:
        raise SchemaError("facts", "gold fact without fact_id", index)
    text_key, text = _first(raw, _GOLD_TEXT_KEYS)
    value_key, value = _first(raw, _GOLD_VALUE_KEYS)
    try:
        fv = FactValue.from_json(value)
    except ValueError as exc:
        raise SchemaError("facts", str(exc), index) from exc
    used = {id_key, text_key, value_key}
    return GoldFact(fid, str(text or ""), fv, {k: v for k, v in raw.items() if k not in used})


def _gold_logic(raw: Any, position: int, index: int) -> GoldLogic:
    if isinstance(raw, dict):
        rule_index = raw.get("rule_index", position)
        _, value = _first(raw, ("value", "answer"))
    else:
        rule_index, value = position, raw
    if not isinstance(rule_index, int) or rule_index < 0:
        raise SchemaError("logic", "rule_index must be a non-negative integer", index)
    if value is None:
        truth = TruthValue.UNKNOWN
    else:
        try:
            truth = TruthValue.of(normalize_label(value))
        except ValueError as exc:
            raise SchemaError("logic", str(exc), index) from exc
    return GoldLogic(rule_index, truth, raw)


def instance_from_json(record: Any, index: int = 0) -> PatientInstance:
    if not isinstance(record, dict):
        raise SchemaError("<record>", "must be an object", index)
    uid = record.get("unique_id")
    if uid is None:
        raise SchemaError("unique_id", "missing", index)
    if isinstance(uid, int) and not isinstance(uid, bool):
        uid = str(uid)
    if not isinstance(uid, str) or not uid:
        raise SchemaError("unique_id", "must be a non-empty string", index)
    note = _text(record, NOTE_KEY, index, required=True)
    if "label" not in record:
        raise SchemaError("label", "missing", index)
    try:
        label = normalize_label(record["label"])
    except ValueError as exc:
        raise SchemaError("label", str(exc), index) from exc
    exp_key = next((k for k in EXPLANATION_KEYS if k in record), "explanation")
    explanation = _text(record, exp_key, index)
    raw_facts = record.get("facts") or []
    raw_logic = record.get("logic") or []
    if not isinstance(raw_facts, list):
        raise SchemaError("facts", "must be a list", index)
    if not isinstance(raw_logic, list):
        raise SchemaError("logic", "must be a list", index)
    gold = tuple(_gold_fact(r, index) for r in raw_facts)
    ids = [g.fact_id for g in gold]
    if len(set(ids)) != len(ids):
        raise SchemaError("facts", "duplicate gold fact ids", index)
    known = {"unique_id", NOTE_KEY, "question", "label", "facts", "logic", *EXPLANATION_KEYS}
    return PatientInstance(
        unique_id=uid,
        patient_note=note,
        label=label,
        question=_text(record, "question", index),
        explanation=explanation,
        gold_facts=gold,
        gold_logic=tuple(_gold_logic(r, i, index) for i, r in enumerate(raw_logic)),
        extra={k: v for k, v in record.items() if k not in known},
        explanation_key=exp_key,
        raw_label=record["label"],
    )


def parse_instances(data: Any) -> list[PatientInstance]:
    if not isinstance(data, list):
        raise SchemaError("<file>", "instance file must hold a JSON array")
    out = []
    seen = set()
    for i, record in enumerate(data):
        inst = instance_from_json(record, i)
        if inst.unique_id in seen:
            raise SchemaError("unique_id", "duplicate", i)
        seen.add(inst.unique_id)
        out.append(inst)
    return out


def load_instances(path: str | os.PathLike) -> list[PatientInstance]:
    return parse_instances(read_json(path))


def dump_instances(instances: Iterable[PatientInstance]) -> str:
    return dumps([inst.to_json() for inst in instances])


# --- joining and cross validation --------------------------------------------------

_SEPARATORS = "_-:./#"


def indicator_id_for(instance: PatientInstance, indicator_ids: Iterable[str]) -> str | None:
    """Owning indicator: explicit ``indicator_id`` field, else the longest id prefix of unique_id."""
    explicit = instance.extra.get("indicator_id")
    ids = list(indicator_ids)
    if isinstance(explicit, str) and explicit in ids:
        return explicit
    uid = instance.unique_id
    best = None
    for ind_id in ids:
        if uid == ind_id or (uid.startswith(ind_id) and uid[len(ind_id)] in _SEPARATORS):
            if best is None or len(ind_id) > len(best):
                best = ind_id
    return best


@dataclass(frozen=True)
class Corpus:
    indicators: tuple[Indicator, ...]
    instances: tuple[PatientInstance, ...]
    owner: dict[str, str] = field(default_factory=dict)

    def indicator(self, ind_id: str) -> Indicator:
        for ind in self.indicators:
            if ind.id == ind_id:
                return ind
        raise KeyError(ind_id)

    def indicator_of(self, instance: PatientInstance) -> Indicator:
        return self.indicator(self.owner[instance.unique_id])

    def instances_of(self, ind_id: str) -> list[PatientInstance]:
        return [i for i in self.instances if self.owner[i.unique_id] == ind_id]

    def with_indicators(self, indicators: Iterable[Indicator]) -> "Corpus":
        return build_corpus(list(indicators), list(self.instances))


def _bind_instance(inst: PatientInstance, ind: Indicator, index: int) -> PatientInstance:
    if not ind.facts:
        return inst
    gold = []
    for g in inst.gold_facts:
        fact = ind.fact(g.fact_id)
        if fact is None:
            raise SchemaError("facts", f"gold fact {g.fact_id!r} is not a template of {ind.id}", index)
        try:
            gold.append(replace(g, value=coerce(g.value, fact.answer_set)))
        except ValueError as exc:
            raise SchemaError("facts", f"{g.fact_id}: {exc}", index) from exc
    n_rules = len(ind.logical_rules)
    for gl in inst.gold_logic:
        if n_rules and gl.rule_index >= n_rules:
            raise SchemaError("logic", f"rule_index {gl.rule_index} out of range", index)
    return replace(inst, gold_facts=tuple(gold))


def build_corpus(indicators: list[Indicator], instances: list[PatientInstance]) -> Corpus:
    """Join instances to indicators and check every fact reference resolves."""
    ids = [ind.id for ind in indicators]
    by_id = {ind.id: ind for ind in indicators}
    owner = {}
    bound = []
    for i, inst in enumerate(instances):
        ind_id = indicator_id_for(inst, ids)
        if ind_id is None:
            raise SchemaError("unique_id", f"{inst.unique_id!r} matches no indicator id", i)
        owner[inst.unique_id] = ind_id
        bound.append(_bind_instance(inst, by_id[ind_id], i))
    for ind in indicators:
        declared = {f.fact_id for f in ind.facts}
        for source in ind.logical_rules.symbolic:
            missing = set(fact_refs(parse_rule(source))) - declared
            if missing:
                raise SchemaError("logical_rules", f"{ind.id}: undeclared facts {sorted(missing)}")
    return Corpus(tuple(indicators), tuple(bound), owner)


def load_corpus(indicators_path, instances_path) -> Corpus:
    return build_corpus(load_indicators(indicators_path), load_instances(instances_path))


# --- statistics ------------------------------------------------------------------

_CJK = "㐀-䶿一-鿿豈-﫿　-〿＀-￯"
_TOKEN = re.compile(rf"[{_CJK}]|[^\s{_CJK}]+")


def whitespace_cjk_tokens(text: str) -> int:
    """Whitespace-separated runs, with every CJK character counted on its own."""
    return len(_TOKEN.findall(text))


@dataclass(frozen=True)
class CorpusStats:
    count: int
    avg_note_tokens: float
    avg_question_tokens: float
    min_facts: int
    max_facts: int
    avg_facts: float

    def as_dict(self) -> dict[str, Any]:
        return {
            "count": self.count,
            "avg_note_tokens": self.avg_note_tokens,
            "avg_question_tokens": self.avg_question_tokens,
            "min_facts": self.min_facts,
            "max_facts": self.max_facts,
            "avg_facts": self.avg_facts,
        }


def corpus_stats(
    instances: Sequence[PatientInstance],
    tokenizer: Callable[[str], int] = whitespace_cjk_tokens,
) -> CorpusStats:
    if not instances:
        raise EmptyCorpus("corpus_stats needs at least one instance")
    counts = [len(i.gold_facts) for i in instances]
    n = len(instances)
    return CorpusStats(
        count=n,
        avg_note_tokens=sum(tokenizer(i.patient_note) for i in instances) / n,
        avg_question_tokens=sum(tokenizer(i.question) for i in instances) / n,
        min_facts=min(counts),
        max_facts=max(counts),
        avg_facts=sum(counts) / n,
    )




# --- run records -------------------------------------------------------------------


@dataclass(frozen=True)
class FactVerification:
    fact_id: str
    value: FactValue
    reasoning: str = ""
    error: str | None = None

    def to_json(self) -> dict[str, Any]:
        out = {"fact_id": self.fact_id, "value": self.value.to_json(), "reasoning": self.reasoning}
        if self.error:
            out["error"] = self.error
        return out

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> "FactVerification":
        return cls(data["fact_id"], FactValue.from_json(data.get("value")),
                   data.get("reasoning", ""), data.get("error"))


@dataclass(frozen=True)
class RunRecord:
    """One model answer for one instance under one method configuration.

    ``error_class`` is left empty by the engine and filled in by evaluation
    for incorrect records.
    """

    instance_id: str
    indicator_id: str
    method: Method
    shots: int
    model_id: str
    raw_response: str
    parsed_answer: TruthValue
    definite: bool = True
    reasoning_mode: ReasoningMode | None = None
    run_tag: str = ""
    fact_verifications: tuple[FactVerification, ...] = ()
    rule_values: tuple[TruthValue, ...] = ()
    rule_trace: str | None = None
    latency_ms: int = 0
    error_class: str | None = None
    error: str | None = None
    degraded: bool = False

    @property
    def bindings(self) -> dict[str, FactValue]:
        return {v.fact_id: v.value for v in self.fact_verifications}

    def is_correct(self, label: bool) -> bool:
        return self.parsed_answer is TruthValue.of(label)

    def to_json(self) -> dict[str, Any]:
        return {
            "instance_id": self.instance_id,
            "indicator_id": self.indicator_id,
            "method": self.method.value,
            "shots": self.shots,
            "reasoning_mode": self.reasoning_mode.value if self.reasoning_mode else None,
            "model_id": self.model_id,
            "run_tag": self.run_tag,
            "raw_response": self.raw_response,
            "parsed_answer": self.parsed_answer.value,
            "definite": self.definite,
            "fact_verifications": [v.to_json() for v in self.fact_verifications],
            "rule_values": [v.value for v in self.rule_values],
            "rule_trace": self.rule_trace,
            "latency_ms": self.latency_ms,
            "error_class": self.error_class,
            "error": self.error,
            "degraded": self.degraded,
        }

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> "RunRecord":
        mode = data.get("reasoning_mode")
        return cls(
            instance_id=data["instance_id"],
            indicator_id=data.get("indicator_id", ""),
            method=Method(data["method"]),
            shots=int(data.get("shots", 0)),
            model_id=data.get("model_id", ""),
            raw_response=data.get("raw_response", ""),
            parsed_answer=TruthValue(data.get("parsed_answer", "Unknown")),
            definite=bool(data.get("definite", True)),
            reasoning_mode=ReasoningMode(mode) if mode else None,
            run_tag=data.get("run_tag", ""),
            fact_verifications=tuple(FactVerification.from_json(v) for v in data.get("fact_verifications", [])),
            rule_values=tuple(TruthValue(v) for v in data.get("rule_values", [])),
            rule_trace=data.get("rule_trace"),
            latency_ms=int(data.get("latency_ms", 0)),
            error_class=data.get("error_class"),
            error=data.get("error"),
            degraded=bool(data.get("degraded", False)),
        )


def dump_records(records: Iterable[RunRecord]) -> str:
    return "".join(json.dumps(r.to_json(), ensure_ascii=False) + "\n" for r in records)


def load_records(path: str | os.PathLike) -> list[RunRecord]:
    try:
        with open(path, encoding="utf-8") as fh:
            lines = [line for line in fh if line.strip()]
    except OSError as exc:
        raise DataIOError(f"{path}: {exc}") from exc
    out = []
    for n, line in enumerate(lines):
        try:
            out.append(RunRecord.from_json(json.loads(line)))
        except (json.JSONDecodeError, KeyError, ValueError) as exc:
            raise SchemaError("<record>", str(exc), n) from exc
    return out
