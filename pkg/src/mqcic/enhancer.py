"""Rule representation enhancement: knowledge, decomposition, fact templates, review.

``enhance_indicator`` runs the three LLM steps and produces an
``EnhancementDraft``.  Semi-automatic drafts wait for a human decision via
``apply_review``; automatic drafts (the ACF-IR configuration) are approved by
the machine but keep ``mode=auto`` so they can be reported separately.
"""

from __future__ import annotations

import enum
import json
import logging
import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Sequence

from .errors import (
    DecompositionError,
    DecompositionUnparseable,
    EnhancementError,
    EnhancementStepError,
    FixtureMiss,
    InvalidEdit,
    KindConflict,
    MqcicError,
    ReviewError,
    RuleError,
    UncoveredFact,
)
from .gateway import ModelClient
from .model import IDENTIFIER, Indicator, LogicalRuleSet, read_json, write_json
from .prompts import DEFAULT, PromptLibrary
from .rules import fact_refs, infer_answer_sets, lint, parse_rule
from .values import AnswerSet, Kind, TemplatedFact, units_compatible

log = logging.getLogger(__name__)


class DraftStatus(str, enum.Enum):
    PENDING = "pending"
    APPROVED = "approved"
    EDITED = "edited"
    REJECTED = "rejected"


class EnhanceMode(str, enum.Enum):
    SEMI = "semi"
    AUTO = "auto"


class ReviewDecision(str, enum.Enum):
    APPROVE = "approve"
    EDIT = "edit"
    REJECT = "reject"


@dataclass(frozen=True)
class EnhancementDraft:
    indicator_id: str
    knowledge: str
    decomposed_nl: tuple[str, ...]
    decomposed_sy: tuple[str, ...]
    templated_facts: tuple[TemplatedFact, ...]
    status: DraftStatus = DraftStatus.PENDING
    mode: EnhanceMode = EnhanceMode.SEMI
    reviewer_note: str = ""

    @property
    def usable(self) -> bool:
        return self.status in (DraftStatus.APPROVED, DraftStatus.EDITED)

    def to_json(self) -> dict[str, Any]:
        return {
            "indicator_id": self.indicator_id,
            "status": self.status.value,
            "mode": self.mode.value,
            "knowledge": self.knowledge,
            "decomposed_nl": list(self.decomposed_nl),
            "decomposed_sy": list(self.decomposed_sy),
            "templated_facts": [f.to_json() for f in self.templated_facts],
            "reviewer_note": self.reviewer_note,
        }

    @classmethod
    def from_json(cls, data: dict[str, Any]) -> "EnhancementDraft":
        return cls(
            indicator_id=data["indicator_id"],
            knowledge=data.get("knowledge", ""),
            decomposed_nl=tuple(data.get("decomposed_nl", [])),
            decomposed_sy=tuple(data.get("decomposed_sy", [])),
            templated_facts=tuple(TemplatedFact.from_json(f) for f in data.get("templated_facts", [])),
            status=DraftStatus(data.get("status", "pending")),
            mode=EnhanceMode(data.get("mode", "semi")),
            reviewer_note=data.get("reviewer_note", ""),
        )


# --- reading model output --------------------------------------------------------

_FENCE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL)


def extract_json(text: str) -> Any:
    """First JSON value in ``text``, looking inside a code fence if there is one."""
    fenced = _FENCE.search(text)
    candidates = [fenced.group(1)] if fenced else []
    candidates.append(text)
    decoder = json.JSONDecoder()
    for chunk in candidates:
        for i, ch in enumerate(chunk):
            if ch in "[{":
                try:
                    value, _ = decoder.raw_decode(chunk, i)
                    return value
                except json.JSONDecodeError:
                    continue
    raise ValueError("no JSON value found in model output")


class _Unusable(Exception):
    def __init__(self, entry: str, error: str):
        self.entry = entry
        self.error = error
        super().__init__(error)


def _read_decomposition(text: str) -> tuple[tuple[str, ...], tuple[str, ...]]:
    try:
        data = extract_json(text)
    except ValueError as exc:
        raise _Unusable(text[:200], str(exc)) from exc
    if not isinstance(data, dict):
        raise _Unusable(text[:200], "expected a JSON object with natural_language and symbolic lists")
    nl = data.get("natural_language", data.get("natural"))
    sy = data.get("symbolic")
    if not isinstance(nl, list) or not isinstance(sy, list):
        raise _Unusable(text[:200], "natural_language and symbolic must both be lists")
    if not all(isinstance(x, str) for x in [*nl, *sy]):
        raise _Unusable(text[:200], "rules must be strings")
    if len(nl) != len(sy):
        raise DecompositionError(
            f"decomposition has {len(nl)} natural-language and {len(sy)} symbolic rules"
        )
    if not sy:
        raise _Unusable("", "no rules returned")
    for entry in sy:
        try:
            expr = parse_rule(entry)
        except RuleError as exc:
            raise _Unusable(entry, str(exc)) from exc
        problem = lint(expr)
        if problem:
            raise _Unusable(entry, problem)
    return tuple(s.strip() for s in nl), tuple(s.strip() for s in sy)


# --- the three steps ---------------------------------------------------------------


def _check_rule(ind: Indicator) -> None:
    if not ind.rule or not ind.rule.strip():
        raise EnhancementError(f"indicator {ind.id!r} has an empty rule")


def enhance_knowledge(ind: Indicator, llm: ModelClient, prompts: PromptLibrary = DEFAULT) -> str:
    _check_rule(ind)
    prompt = prompts.render("knowledge", definition=ind.definition, formula=ind.formula,
                            other=ind.other, rule=ind.rule)
    return llm.ask(prompt).text


def decompose_rules(ind: Indicator, knowledge: str, llm: ModelClient,
                    prompts: PromptLibrary = DEFAULT) -> tuple[tuple[str, ...], tuple[str, ...]]:
    """Natural-language and symbolic rule lists of equal length.

    An unparseable or vacuous symbolic rule gets one repair prompt carrying
    the error; a second failure raises ``DecompositionUnparseable``.
    """
    _check_rule(ind)
    prompt = prompts.render("decompose", definition=ind.definition, rule=ind.rule,
                            knowledge=knowledge or "(none)")
    reply = llm.ask(prompt).text
    try:
        return _read_decomposition(reply)
    except _Unusable as first:
        log.info("decomposition of %s unusable (%s); reprompting", ind.id, first.error)
        repair = prompts.render("decompose_repair", original=prompt, previous=reply,
                                error=f"{first.entry!r}: {first.error}")
        reply = llm.ask(repair).text
        try:
            return _read_decomposition(reply)
        except _Unusable as second:
            raise DecompositionUnparseable(second.entry, second.error) from None


def _answer_set_from_usage(fid: str, usage) -> AnswerSet:
    if usage.kind is Kind.NUMERIC:
        return AnswerSet.numeric(usage.unit)
    if usage.kind is Kind.ENUM:
        if len(set(usage.values)) < 2:
            raise KindConflict(fid, "enum fact needs at least two allowed values")
        return AnswerSet.enum(usage.values)
    return AnswerSet.boolean()


def _reconcile(fid: str, usage, template: TemplatedFact | None) -> TemplatedFact:
    if template is None:
        raise UncoveredFact(fid)
    aset = template.answer_set
    if usage.kind is not None and aset.kind is not usage.kind:
        raise KindConflict(fid, f"template says {aset.kind.value}, rules use it as {usage.kind.value}")
    if aset.kind is Kind.ENUM:
        allowed = {v.casefold() for v in aset.values}
        stray = [v for v in usage.values if v.casefold() not in allowed]
        if stray:
            raise KindConflict(fid, f"values {stray} are not in the answer set")
    if aset.kind is Kind.NUMERIC and usage.unit and not units_compatible(usage.unit, aset.unit):
        raise KindConflict(fid, f"rules use unit {usage.unit!r}, template declares {aset.unit!r}")
    return template


def _read_templates(text: str) -> dict[str, TemplatedFact | None]:
    """Templates by fact id; a None value marks a template whose answer set is missing."""
    data = extract_json(text)
    if isinstance(data, dict):
        data = data.get("facts", data.get("templated_facts"))
    if not isinstance(data, list):
        raise ValueError("expected a JSON list of fact templates")
    out: dict[str, Any] = {}
    for item in data:
        if not isinstance(item, dict) or not isinstance(item.get("fact_id"), str):
            raise ValueError("each template needs a fact_id")
        fid = item["fact_id"].strip()
        if fid in out:
            raise EnhancementError(f"fact {fid!r} has more than one template")
        if "answer_set" not in item:
            out[fid] = item
            continue
        out[fid] = TemplatedFact(fid, str(item.get("description", "")),
                                 AnswerSet.from_json(item["answer_set"]),
                                 bool(item.get("required", True)))
    return out


def templatize_facts(ind: Indicator, nl: Sequence[str], sy: Sequence[str], llm: ModelClient,
                     prompts: PromptLibrary = DEFAULT) -> tuple[TemplatedFact, ...]:
    """One template per fact referenced by ``sy``, consistent with how the rules use it."""
    usage = infer_answer_sets(parse_rule(s) for s in sy)
    prompt = prompts.render(
        "templatize",
        rule=ind.rule,
        natural_rules="\n".join(f"{i + 1}. {r}" for i, r in enumerate(nl)),
        symbolic_rules="\n".join(f"{i + 1}. {r}" for i, r in enumerate(sy)),
    )
    reply = llm.ask(prompt).text
    try:
        raw = _read_templates(reply)
    except ValueError as exc:
        raise EnhancementError(f"unreadable fact templates: {exc}") from exc
    templates = []
    for fid, u in usage.items():
        t = raw.get(fid)
        if isinstance(t, dict):
            # the model omitted the answer set; take it from usage
            t = TemplatedFact(fid, str(t.get("description", "")), _answer_set_from_usage(fid, u),
                              bool(t.get("required", True)))
        if t is not None and not IDENTIFIER.match(fid):
            raise KindConflict(fid, "not an identifier")
        templates.append(_reconcile(fid, u, t))
    unused = sorted(set(raw) - set(usage))
    if unused:
        log.info("dropping templates not referenced by any rule: %s", unused)
    for s in sy:
        try:
            parse_rule(s, templates)
        except RuleError as exc:
            raise KindConflict(getattr(exc, "fact_id", "?"), str(exc)) from exc
    return tuple(templates)


# --- orchestration ------------------------------------------------------------------


def draft_problems(draft: EnhancementDraft) -> list[str]:
    """Reasons ``draft`` cannot be used for CF-IR; empty when it is sound."""
    problems = []
    if not draft.decomposed_sy:
        problems.append("no symbolic rules")
    if len(draft.decomposed_nl) != len(draft.decomposed_sy):
        problems.append("natural-language and symbolic rule counts differ")
    ids = [f.fact_id for f in draft.templated_facts]
    if len(set(ids)) != len(ids):
        problems.append("duplicate fact templates")
    referenced: set[str] = set()
    for s in draft.decomposed_sy:
        try:
            expr = parse_rule(s, draft.templated_facts)
        except RuleError as exc:
            problems.append(f"{s!r}: {exc}")
            continue
        referenced.update(fact_refs(expr))
        issue = lint(expr)
        if issue:
            problems.append(f"{s!r}: {issue}")
    unused = set(ids) - referenced
    if unused and not any("unknown fact" in p for p in problems):
        problems.append(f"templates not used by any rule: {sorted(unused)}")
    return problems


def enhance_indicator(ind: Indicator, llm: ModelClient, mode: EnhanceMode = EnhanceMode.SEMI,
                      prompts: PromptLibrary = DEFAULT, with_knowledge: bool = True) -> EnhancementDraft:
    _check_rule(ind)
    mode = EnhanceMode(mode)

    def step(name, fn, *args):
        try:
            return fn(*args)
        except FixtureMiss:
            raise
        except MqcicError as exc:
            raise EnhancementStepError(name, exc) from exc

    knowledge = step("knowledge", enhance_knowledge, ind, llm, prompts) if with_knowledge else ""
    nl, sy = step("decomposition", decompose_rules, ind, knowledge, llm, prompts)
    facts = step("templatization", templatize_facts, ind, nl, sy, llm, prompts)
    draft = EnhancementDraft(ind.id, knowledge, nl, sy, facts, mode=mode)
    if mode is EnhanceMode.AUTO:
        problems = draft_problems(draft)
        if problems:
            raise EnhancementStepError("validation", EnhancementError("; ".join(problems)))
        draft = replace(draft, status=DraftStatus.APPROVED, reviewer_note="approved automatically")
    return draft


def apply_review(draft: EnhancementDraft, decision: ReviewDecision | str, note: str = "",
                 edited: EnhancementDraft | None = None) -> EnhancementDraft:
    decision = ReviewDecision(decision)
    if draft.status is not DraftStatus.PENDING:
        raise ReviewError(f"draft for {draft.indicator_id} is already {draft.status.value}")
    if decision is ReviewDecision.REJECT:
        return replace(draft, status=DraftStatus.REJECTED, reviewer_note=note)
    if decision is ReviewDecision.APPROVE:
        problems = draft_problems(draft)
        if problems:
            raise ReviewError("cannot approve: " + "; ".join(problems))
        return replace(draft, status=DraftStatus.APPROVED, reviewer_note=note)
    if edited is None:
        raise InvalidEdit("an edit needs the edited draft")
    if edited.indicator_id != draft.indicator_id:
        raise InvalidEdit("edited draft belongs to another indicator")
    problems = draft_problems(edited)
    if problems:
        raise InvalidEdit("; ".join(problems))
    return replace(draft, knowledge=edited.knowledge, decomposed_nl=edited.decomposed_nl,
                   decomposed_sy=edited.decomposed_sy, templated_facts=edited.templated_facts,
                   status=DraftStatus.EDITED, reviewer_note=note)


def merge_draft(ind: Indicator, draft: EnhancementDraft) -> Indicator:
    """Write an approved or edited draft into the indicator; rejected drafts change nothing."""
    if draft.indicator_id != ind.id:
        raise ReviewError(f"draft for {draft.indicator_id} applied to {ind.id}")
    if draft.status is DraftStatus.REJECTED:
        return ind
    if not draft.usable:
        raise ReviewError(f"draft for {ind.id} has not been reviewed")
    return replace(ind, facts=draft.templated_facts,
                   logical_rules=LogicalRuleSet(draft.decomposed_nl, draft.decomposed_sy))


# --- persistence --------------------------------------------------------------------


def drafts_path(indicators_path: str | Path) -> Path:
    p = Path(indicators_path)
    return p.with_name(p.stem + ".drafts.json")


def save_drafts(path: str | Path, drafts: Sequence[EnhancementDraft]) -> None:
    write_json(path, [d.to_json() for d in drafts])


def load_drafts(path: str | Path) -> list[EnhancementDraft]:
    data = read_json(path)
    if not isinstance(data, list):
        raise EnhancementError(f"{path}: drafts file must hold a JSON array")
    try:
        return [EnhancementDraft.from_json(d) for d in data]
    except (KeyError, ValueError, TypeError) as exc:
        raise EnhancementError(f"{path}: bad draft record: {exc}") from exc


def describe_draft(draft: EnhancementDraft, ind: Indicator | None = None) -> str:
    """Human-readable summary shown during review."""
    lines = [f"Indicator {draft.indicator_id} [{draft.status.value}, {draft.mode.value}]"]
    if ind is not None:
        lines.append(f"Rule: {ind.rule}")
    lines.append("Knowledge:")
    lines.append("  " + (draft.knowledge.strip().replace("\n", "\n  ") or "(none)"))
    lines.append("Rules:")
    for i, (nl, sy) in enumerate(zip(draft.decomposed_nl, draft.decomposed_sy), 1):
        lines.append(f"  {i}. {nl}")
        lines.append(f"     {sy}")
    lines.append("Fact templates:")
    for f in draft.templated_facts:
        lines.append(f"  - {f.fact_id}: {f.description} ({f.answer_set.describe()})")
    return "\n".join(lines)


__all__ = [
    "DraftStatus", "EnhanceMode", "EnhancementDraft", "ReviewDecision", "apply_review",
    "decompose_rules", "describe_draft", "draft_problems", "drafts_path", "enhance_indicator",
    "enhance_knowledge", "extract_json", "load_drafts", "merge_draft", "save_drafts",
    "templatize_facts",
]
