"""Outcome and step-wise evaluation, error taxonomy, aggregation and reports."""

from __future__ import annotations

import csv
import io
import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Iterable, Mapping, Sequence

from .errors import BackendError, EmptySet, FixtureMiss, JudgeUnavailable, UnparseableJudgment
from .gateway import ModelClient, judge_binary
from .model import Corpus, GoldFact, Indicator, PatientInstance, ReasoningMode, RunRecord
from .prompts import DEFAULT, PromptLibrary
from .values import TruthValue

log = logging.getLogger(__name__)

ERROR_CLASSES = ("A", "B", "C")
CORRECTNESS = "judge_correctness"
FAITHFULNESS = "judge_faithfulness"


class Judge:
    """A judge model with the two criterion prompts and an unparseable-output counter."""

    def __init__(self, client: ModelClient, prompts: PromptLibrary = DEFAULT):
        self.client = client
        self.prompts = prompts
        self.unparseable = 0
        self._lock = threading.Lock()

    def verdict(self, criterion: str, subject: str) -> int:
        try:
            return judge_binary(self.client, self.prompts.render(criterion), subject)
        except UnparseableJudgment as exc:
            with self._lock:
                self.unparseable += 1
            log.warning("unparseable judgment counted as 0: %r", exc.raw[:80])
            return 0
        except (BackendError, FixtureMiss) as exc:
            raise JudgeUnavailable(str(exc)) from exc


def response_text(record: RunRecord) -> str:
    """The response judged for fact-level metrics: fact reasoning, then the final output."""
    parts = [f"[{v.fact_id}] {v.reasoning}".strip() for v in record.fact_verifications if v.reasoning]
    if record.raw_response:
        parts.append(record.raw_response)
    return "\n\n".join(parts)


def _fact_subject(fact: GoldFact, response: str, note: str | None = None) -> str:
    lines = []
    if note is not None:
        lines += ["Patient note:", note, ""]
    lines += [
        f"Reference fact: {fact.fact_id} = {fact.value.render()}",
        f"Original text: {fact.original_text}",
        "",
        "Model response:",
        response,
    ]
    return "\n".join(lines)


def accuracy(records: Sequence[RunRecord], instances: Iterable[PatientInstance]) -> Decimal:
    """Micro-averaged: correct records over records; Unknown is never correct."""
    labels = {i.unique_id: i.label for i in instances}
    if not records:
        raise EmptySet("no records to score")
    correct = sum(1 for r in records if r.is_correct(labels[r.instance_id]))
    return Decimal(correct) / Decimal(len(records))


def _fact_score(record: RunRecord, instance: PatientInstance, judge: Judge, criterion: str) -> Decimal:
    m = len(instance.gold_facts)
    if m == 0:
        raise EmptySet(f"instance {instance.unique_id} has no gold facts")
    response = response_text(record)
    note = instance.patient_note if criterion == FAITHFULNESS else None
    hits = sum(judge.verdict(criterion, _fact_subject(g, response, note)) for g in instance.gold_facts)
    return Decimal(hits) / Decimal(m)


def fact_correctness(record: RunRecord, instance: PatientInstance, judge: Judge) -> Decimal:
    return _fact_score(record, instance, judge, CORRECTNESS)


def fact_faithfulness(record: RunRecord, instance: PatientInstance, judge: Judge) -> Decimal:
    return _fact_score(record, instance, judge, FAITHFULNESS)


def _facts_wrong(record: RunRecord, instance: PatientInstance, judge: Judge | None) -> bool:
    bindings = record.bindings
    gold = instance.gold_facts
    if gold and bindings and all(g.fact_id in bindings for g in gold):
        return any(not bindings[g.fact_id].same_as(g.value) for g in gold)
    if not gold:
        return False
    if judge is None:
        raise JudgeUnavailable("facts cannot be compared structurally and no judge is configured")
    response = response_text(record)
    return any(judge.verdict(CORRECTNESS, _fact_subject(g, response)) == 0 for g in gold)


def classify_error(record: RunRecord, instance: PatientInstance, judge: Judge | None = None) -> str:
    """Earliest error of an incorrect record: A (fact), B (reasoning) or C (other).

    Raises ``JudgeUnavailable`` when the fact check needs a judge that is
    missing or failing; callers count such records as unresolved.
    """
    if record.is_correct(instance.label):
        raise ValueError(f"record for {instance.unique_id} is correct")
    if not record.fact_verifications and not record.raw_response.strip():
        return "C"
    if _facts_wrong(record, instance, judge):
        return "A"
    if record.error or not record.raw_response.strip():
        return "C"
    if record.reasoning_mode is ReasoningMode.SYMBOLIC:
        # the evaluator is exact, so right facts and a wrong answer cannot be a reasoning slip
        return "C"
    if record.rule_values:
        if all(v is TruthValue.UNKNOWN for v in record.rule_values):
            return "C"
        return "B"
    return "B" if record.parsed_answer.definite else "C"


@dataclass(frozen=True)
class InstanceScore:
    instance_id: str
    correct: bool
    fc: Decimal | None = None
    ff: Decimal | None = None
    error_class: str | None = None
    unresolved: bool = False

    def to_json(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "correct": self.correct,
            "fc": None if self.fc is None else str(self.fc),
            "ff": None if self.ff is None else str(self.ff),
            "error_class": self.error_class,
            "unresolved": self.unresolved,
        }

    @classmethod
    def from_json(cls, data: dict) -> "InstanceScore":
        dec = lambda v: None if v is None else Decimal(v)  # noqa: E731
        return cls(data["instance_id"], bool(data["correct"]), dec(data.get("fc")), dec(data.get("ff")),
                   data.get("error_class"), bool(data.get("unresolved", False)))


def score_record(record: RunRecord, instance: PatientInstance, judge: Judge | None = None,
                 step_wise: bool = True) -> InstanceScore:
    correct = record.is_correct(instance.label)
    fc = ff = None
    if judge is not None and step_wise and instance.gold_facts:
        try:
            fc = fact_correctness(record, instance, judge)
            ff = fact_faithfulness(record, instance, judge)
        except JudgeUnavailable as exc:
            log.warning("no fact scores for %s: %s", instance.unique_id, exc)
            fc = ff = None
    error_class, unresolved = None, False
    if not correct:
        try:
            error_class = classify_error(record, instance, judge)
        except JudgeUnavailable as exc:
            log.warning("error class unresolved for %s: %s", instance.unique_id, exc)
            unresolved = True
    return InstanceScore(instance.unique_id, correct, fc, ff, error_class, unresolved)


def score_records(records: Sequence[RunRecord], corpus: Corpus, judge: Judge | None = None,
                  width: int = 1, step_wise: bool = True) -> list[InstanceScore]:
    by_id = {i.unique_id: i for i in corpus.instances}

    def one(rec: RunRecord) -> InstanceScore:
        return score_record(rec, by_id[rec.instance_id], judge, step_wise)

    if width <= 1:
        return [one(r) for r in records]
    with ThreadPoolExecutor(max_workers=width) as pool:
        return list(pool.map(one, records))


def aggregate_indicator(records: Sequence[RunRecord], instances: Iterable[PatientInstance],
                        indicator: Indicator) -> dict:
    """Numerator (definite True answers) over the indicator's instances.

    ``instances`` are the instances meeting the indicator's denominator rule;
    the proportion is None when there are none.
    """
    ids = {i.unique_id for i in instances}
    answered = {r.instance_id: r for r in records if r.instance_id in ids}
    numerator = sum(1 for r in answered.values() if r.parsed_answer is TruthValue.TRUE and r.definite)
    denominator = len(ids)
    proportion = Decimal(numerator) / Decimal(denominator) if denominator else None
    return {"indicator_id": indicator.id, "numerator": numerator, "denominator": denominator,
            "proportion": proportion}


# --- reports -------------------------------------------------------------------


@dataclass(frozen=True)
class CellKey:
    model: str
    method: str
    shots: int
    reasoning: str = ""

    @property
    def label(self) -> str:
        return f"{self.method}[{self.reasoning}]" if self.reasoning else self.method


def _mean(values: Sequence[Decimal]) -> Decimal | None:
    return sum(values, Decimal(0)) / Decimal(len(values)) if values else None


@dataclass(frozen=True)
class CellSummary:
    key: CellKey
    n: int
    n_correct: int
    count_a: int
    count_b: int
    count_c: int
    fc: Decimal | None
    ff: Decimal | None
    unresolved: int
    fc_coverage: int

    def _rate(self, count: int) -> Decimal:
        return Decimal(count) / Decimal(self.n)

    @property
    def accuracy(self) -> Decimal:
        return self._rate(self.n_correct)

    @property
    def rate_a(self) -> Decimal:
        return self._rate(self.count_a)

    @property
    def rate_b(self) -> Decimal:
        return self._rate(self.count_b)

    @property
    def rate_c(self) -> Decimal:
        return self._rate(self.count_c)

    @property
    def total_error(self) -> Decimal:
        # one division of the summed counts, so the total is not a sum of rounded rates
        return self._rate(self.count_a + self.count_b + self.count_c)

    @classmethod
    def of(cls, key: CellKey, scores: Sequence[InstanceScore]) -> "CellSummary":
        count = {c: sum(1 for s in scores if s.error_class == c) for c in ERROR_CLASSES}
        fcs = [s.fc for s in scores if s.fc is not None]
        ffs = [s.ff for s in scores if s.ff is not None]
        return cls(
            key=key,
            n=len(scores),
            n_correct=sum(s.correct for s in scores),
            count_a=count["A"],
            count_b=count["B"],
            count_c=count["C"],
            fc=_mean(fcs),
            ff=_mean(ffs),
            unresolved=sum(s.unresolved for s in scores),
            fc_coverage=len(fcs),
        )


COLUMNS = ("model", "method", "shots", "n", "accuracy", "fc", "ff",
           "type_a", "type_b", "type_c", "total_error", "unresolved")


def fmt(value: Decimal | None, places: int = 2, percent: bool = False) -> str:
    if value is None:
        return "-"
    if percent:
        value = value * 100
    q = Decimal(1).scaleb(-places)
    return str(value.quantize(q, rounding=ROUND_HALF_UP))


@dataclass
class ReportTable:
    cells: list[CellSummary] = field(default_factory=list)
    absent: list[CellKey] = field(default_factory=list)

    def _rows(self) -> list[list[str]]:
        rows = []
        entries = [(c.key, c) for c in self.cells] + [(k, None) for k in self.absent]
        for key, c in sorted(entries, key=lambda e: (e[0].model, e[0].method, e[0].shots, e[0].reasoning)):
            head = [key.model, key.label, str(key.shots)]
            if c is None:
                rows.append(head + ["absent"] + ["-"] * (len(COLUMNS) - 4))
                continue
            rows.append(head + [
                str(c.n),
                fmt(c.accuracy, percent=True),
                fmt(c.fc, percent=True),
                fmt(c.ff, percent=True),
                fmt(c.rate_a),
                fmt(c.rate_b),
                fmt(c.rate_c),
                fmt(c.total_error),
                str(c.unresolved),
            ])
        return rows

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        w.writerows(self._rows())
        return buf.getvalue()

    def to_markdown(self) -> str:
        rows = self._rows()
        out = ["| " + " | ".join(COLUMNS) + " |", "|" + "---|" * len(COLUMNS)]
        out += ["| " + " | ".join(r) + " |" for r in rows]
        return "\n".join(out) + "\n"

    def to_text(self) -> str:
        rows = [list(COLUMNS)] + self._rows()
        widths = [max(len(r[i]) for r in rows) for i in range(len(COLUMNS))]
        return "\n".join("  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip() for r in rows) + "\n"

    def render(self, fmt_name: str) -> str:
        return {"csv": self.to_csv, "md": self.to_markdown, "text": self.to_text}[fmt_name]()


def build_report(groups: Mapping[CellKey, Sequence[InstanceScore]],
                 absent: Iterable[CellKey] = ()) -> ReportTable:
    """One row per non-empty group; empty groups are skipped with a warning."""
    cells = []
    for key, scores in groups.items():
        if not scores:
            log.warning("skipping empty group %s", key)
            continue
        cells.append(CellSummary.of(key, scores))
    return ReportTable(cells, sorted(set(absent), key=lambda k: (k.model, k.method, k.shots, k.reasoning)))
