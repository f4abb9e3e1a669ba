"""Prompt strategies and the two-stage CF-IR inference.

CF-IR first verifies every templated fact against the note, one isolated
prompt per fact, then applies the indicator's logical rules to the verified
values, either by asking a model (natural-language or symbolic rules) or
by evaluating the symbolic rules directly.  The fact prompts never carry
the rule set and the reasoning prompt never carries the note.
"""

from __future__ import annotations

import logging
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

from .answers import parse_final_answer
from .enhancer import EnhanceMode, EnhancementDraft, enhance_indicator, merge_draft
from .errors import (
    BackendError,
    ConfigError,
    EmptyRuleSet,
    EnhancementError,
    FixtureMiss,
    MqcicError,
    RuleError,
)
from .gateway import ChatResponse, GenerationParams, ModelClient, default_params
from .model import (
    Corpus,
    FactVerification,
    Indicator,
    Method,
    PatientInstance,
    ReasoningMode,
    RunRecord,
    read_json,
)
from .prompts import DEFAULT, PromptLibrary
from .rules import evaluate, final_answer
from .values import UNKNOWN, FactValue, Kind, TemplatedFact, TruthValue, known_unit, units_compatible

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MethodConfig:
    method: Method
    shots: int = 0
    reasoning_mode: ReasoningMode = ReasoningMode.SYMBOLIC
    model_id: str = ""
    params: GenerationParams = field(default_factory=default_params)
    # verify all facts in one prompt instead of one isolated prompt per fact
    batch_facts: bool = False

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        object.__setattr__(self, "reasoning_mode", ReasoningMode(self.reasoning_mode))
        if self.shots not in (0, 1):
            raise ConfigError("shots must be 0 or 1")

    @property
    def uses_facts(self) -> bool:
        return self.method in (Method.CFIR, Method.ACFIR)

    @property
    def label(self) -> str:
        if self.uses_facts:
            return f"{self.method.value}[{self.reasoning_mode.value}]"
        return self.method.value


@dataclass(frozen=True)
class Exemplar:
    """A reviewed worked example for one indicator, drawn from outside the benchmark."""

    indicator_id: str
    instance_id: str
    patient_note: str
    question: str
    output: str
    fact_output: str = ""
    reasoning_output: str = ""

    @classmethod
    def from_json(cls, data: dict) -> "Exemplar":
        return cls(
            indicator_id=data["indicator_id"],
            instance_id=str(data["instance_id"]),
            patient_note=data.get("patient note", data.get("patient_note", "")),
            question=data.get("question", ""),
            output=data.get("output", ""),
            fact_output=data.get("fact_output", ""),
            reasoning_output=data.get("reasoning_output", ""),
        )


def load_exemplars(path) -> dict[str, Exemplar]:
    data = read_json(path)
    items = data.values() if isinstance(data, dict) else data
    try:
        exemplars = [Exemplar.from_json(d) for d in items]
    except (KeyError, TypeError, AttributeError) as exc:
        raise ConfigError(f"{path}: bad exemplar record: {exc}") from exc
    return {e.indicator_id: e for e in exemplars}


def check_exemplars(exemplars: Mapping[str, Exemplar], corpus: Corpus) -> None:
    ids = {i.unique_id for i in corpus.instances}
    leaked = sorted(e.instance_id for e in exemplars.values() if e.instance_id in ids)
    if leaked:
        raise ConfigError(f"exemplar instances are part of the evaluation corpus: {leaked}")


class RecordingClient:
    """Wraps a ModelClient, keeping every prompt and summing response latency."""

    def __init__(self, inner: ModelClient):
        self.inner = inner
        self.calls: list[tuple[str | None, str, ChatResponse]] = []
        self._lock = threading.Lock()

    @property
    def model_id(self) -> str:
        return self.inner.model_id

    @property
    def latency_ms(self) -> int:
        return sum(r.latency_ms for _, _, r in self.calls)

    def ask(self, prompt: str, system: str | None = None) -> ChatResponse:
        resp = self.inner.ask(prompt, system)
        with self._lock:
            self.calls.append((system, prompt, resp))
        return resp


# --- clinical fact verification ----------------------------------------------------

_FACT_MARKER = re.compile(r"(?:final\s+answer|answer|答案)\s*[:：]", re.IGNORECASE)
_UNSURE = re.compile(
    r"not\s+sure|unknown|unsure|cannot\s+(?:be\s+)?determin|can't\s+determin|undetermin"
    r"|insufficient|not\s+(?:mentioned|recorded|documented)|不确定|无法|未提及",
    re.IGNORECASE,
)
_BOOL_WORD = re.compile(r"(?<![A-Za-z])(true|false|yes|no|是|否)(?![A-Za-z])", re.IGNORECASE)
_NUMBER = re.compile(r"(?<![\w.])(-?\d+(?:\.\d+)?)(?:\s*(%|[A-Za-z][A-Za-z/]*))?")
_ROMAN = re.compile(r"^(?:(?:grade|stage|class|level|type)\s+)?(IV|V|I{1,3})(?![A-Za-z])", re.IGNORECASE)
_ROMAN_VALUES = {"i": 1, "ii": 2, "iii": 3, "iv": 4, "v": 5}


def answer_segment(text: str) -> str:
    """The part of a reply holding the answer: after the last answer marker, else the last line."""
    markers = list(_FACT_MARKER.finditer(text))
    if markers:
        rest = text[markers[-1].end():].strip()
        segment = rest.splitlines()[0] if rest else ""
    else:
        lines = [ln for ln in text.strip().splitlines() if ln.strip()]
        segment = lines[-1] if lines else ""
    if "=" in segment:
        segment = segment.rsplit("=", 1)[1]
    return segment.strip().strip("*").strip()


def parse_fact_value(text: str, fact: TemplatedFact, segment_only: bool = False) -> FactValue:
    """Read a value in ``fact``'s answer set from a reply; anything unclear is Unknown."""
    seg = text.strip() if segment_only else answer_segment(text)
    if "=" in seg:
        seg = seg.rsplit("=", 1)[1].strip()
    if not seg or _UNSURE.search(seg):
        return UNKNOWN
    aset = fact.answer_set
    if aset.kind is Kind.BOOLEAN:
        words = _BOOL_WORD.findall(seg)
        if not words:
            return UNKNOWN
        return FactValue.bool(words[-1].casefold() in ("true", "yes", "是"))
    if aset.kind is Kind.NUMERIC:
        m = _NUMBER.search(seg)
        if m:
            unit = m.group(2) or ""
            if unit and not units_compatible(unit, aset.unit) and known_unit(unit):
                return UNKNOWN
            return FactValue.num(m.group(1), aset.unit)
        r = _ROMAN.match(seg)
        if r:
            return FactValue.num(_ROMAN_VALUES[r.group(1).casefold()], aset.unit)
        return UNKNOWN
    best, best_pos = None, -1
    low = seg.casefold()
    for value in aset.values:
        for m in re.finditer(rf"(?<!\w){re.escape(value.casefold())}(?!\w)", low):
            if m.start() > best_pos:
                best, best_pos = value, m.start()
    return FactValue.enum(best) if best is not None else UNKNOWN


def _example_block(prompts: PromptLibrary, ex: Exemplar | None, output: str) -> str:
    if ex is None:
        return ""
    return prompts.render("example", note=ex.patient_note, question=ex.question, output=output) + "\n\n"


def verify_fact(note: str, fact: TemplatedFact, question: str, llm, prompts: PromptLibrary = DEFAULT,
                exemplar: Exemplar | None = None) -> tuple[FactValue, str]:
    prompt = prompts.render(
        "fact_verify", note=note, question=question, fact_id=fact.fact_id,
        description=fact.description or fact.fact_id, answer_format=fact.answer_set.describe() + " or Not sure",
    )
    if exemplar is not None:
        prompt = _example_block(prompts, exemplar, exemplar.fact_output or exemplar.output) + prompt
    reply = llm.ask(prompt).text
    return parse_fact_value(reply, fact), reply


@dataclass
class FactCheck:
    bindings: dict[str, FactValue]
    verifications: list[FactVerification]
    degraded: bool = False


def _verify_batch(note, facts, question, llm, prompts, exemplar) -> list[FactVerification]:
    listing = "\n".join(
        f"- {f.fact_id}: {f.description or f.fact_id} (answer: {f.answer_set.describe()})" for f in facts
    )
    prompt = prompts.render("fact_verify_batch", note=note, question=question, facts=listing)
    if exemplar is not None:
        prompt = _example_block(prompts, exemplar, exemplar.fact_output or exemplar.output) + prompt
    reply = llm.ask(prompt).text
    out = []
    for f in facts:
        hits = re.findall(rf"(?<!\w){re.escape(f.fact_id)}\s*[=:：]\s*(.+)", reply)
        value = parse_fact_value(hits[-1], f, segment_only=True) if hits else UNKNOWN
        out.append(FactVerification(f.fact_id, value, reply))
    return out


def verify_all_facts(instance: PatientInstance, indicator: Indicator, llm, prompts: PromptLibrary = DEFAULT,
                     exemplar: Exemplar | None = None, width: int = 1, batch: bool = False) -> FactCheck:
    """Verify every template of ``indicator``; backend failures become Unknown and mark the check degraded."""
    question = instance.question or indicator.rule
    facts = list(indicator.facts)
    if batch:
        try:
            results = _verify_batch(instance.patient_note, facts, question, llm, prompts, exemplar)
        except BackendError as exc:
            results = [FactVerification(f.fact_id, UNKNOWN, "", str(exc)) for f in facts]
    else:
        def one(fact: TemplatedFact) -> FactVerification:
            try:
                value, reasoning = verify_fact(instance.patient_note, fact, question, llm, prompts, exemplar)
            except BackendError as exc:
                return FactVerification(fact.fact_id, UNKNOWN, "", str(exc))
            return FactVerification(fact.fact_id, value, reasoning)

        if width > 1 and len(facts) > 1:
            with ThreadPoolExecutor(max_workers=width) as pool:
                results = list(pool.map(one, facts))
        else:
            results = [one(f) for f in facts]
    degraded = any(r.error for r in results)
    return FactCheck({r.fact_id: r.value for r in results}, results, degraded)


# --- inferential rule reasoning ----------------------------------------------------

_RULE_VERDICT = re.compile(
    r"rule\s*#?\s*(\d+)\s*[:：=]\s*[*\"'“]*\s*(true|false|yes|no|unknown|not\s+sure)(?![A-Za-z])",
    re.IGNORECASE,
)
_VERDICT_WORDS = {"true": TruthValue.TRUE, "yes": TruthValue.TRUE, "false": TruthValue.FALSE,
                  "no": TruthValue.FALSE}


def render_facts(bindings: Mapping[str, FactValue], indicator: Indicator, symbolic: bool) -> str:
    lines = []
    for f in indicator.facts:
        value = bindings.get(f.fact_id, UNKNOWN).render()
        if symbolic:
            lines.append(f"{f.fact_id} = {value}")
        else:
            lines.append(f"- {f.description or f.fact_id}: {value}")
    return "\n".join(lines)


def parse_rule_verdicts(text: str, n_rules: int) -> list[TruthValue]:
    verdicts = [TruthValue.UNKNOWN] * n_rules
    for m in _RULE_VERDICT.finditer(text):
        k = int(m.group(1)) - 1
        if 0 <= k < n_rules:
            verdicts[k] = _VERDICT_WORDS.get(m.group(2).casefold(), TruthValue.UNKNOWN)
    return verdicts


def symbolic_explanation(bindings: Mapping[str, FactValue], indicator: Indicator,
                         values: Sequence[TruthValue]) -> str:
    lines = ["Verified facts:"]
    lines += [f"  {ln}" for ln in render_facts(bindings, indicator, symbolic=True).splitlines()]
    lines.append("Rules:")
    nl = indicator.logical_rules.natural_language
    for i, (sy, v) in enumerate(zip(indicator.logical_rules.symbolic, values)):
        lines.append(f"  {i + 1}. {sy} -> {v.value}")
        if i < len(nl) and nl[i]:
            lines.append(f"     ({nl[i]})")
    failed = [str(i + 1) for i, v in enumerate(values) if v is TruthValue.FALSE]
    unknown = [str(i + 1) for i, v in enumerate(values) if v is TruthValue.UNKNOWN]
    if failed:
        lines.append("Failed rules: " + ", ".join(failed))
    if unknown:
        lines.append("Undetermined rules: " + ", ".join(unknown))
    answer, definite = final_answer(values)
    lines.append(f"Answer: {answer}" + ("" if definite else " (indefinite)"))
    return "\n".join(lines)


def reason_rules(bindings: Mapping[str, FactValue], indicator: Indicator, mode: ReasoningMode,
                 llm=None, prompts: PromptLibrary = DEFAULT,
                 exemplar: Exemplar | None = None) -> tuple[list[TruthValue], str]:
    """Per-rule truth values and an explanation."""
    mode = ReasoningMode(mode)
    rules = indicator.logical_rules
    if not rules.symbolic:
        raise EmptyRuleSet(f"indicator {indicator.id} has no logical rules")
    if mode is ReasoningMode.SYMBOLIC:
        values = [evaluate(expr, bindings) for expr in indicator.parsed_rules()]
        return values, symbolic_explanation(bindings, indicator, values)
    if llm is None:
        raise ConfigError(f"{mode.value} reasoning needs a model")
    symbolic = mode is ReasoningMode.LLM_SY
    listing = rules.symbolic if symbolic else rules.natural_language
    prompt = prompts.render(
        "reason_sy" if symbolic else "reason_nl",
        facts=render_facts(bindings, indicator, symbolic),
        rules="\n".join(f"Rule {i + 1}: {r}" for i, r in enumerate(listing)),
    )
    if exemplar is not None and exemplar.reasoning_output:
        prompt = prompts.render("example", note="(facts already verified)", question=exemplar.question,
                                output=exemplar.reasoning_output) + "\n\n" + prompt
    reply = llm.ask(prompt).text
    return parse_rule_verdicts(reply, len(listing)), reply


# --- running one instance --------------------------------------------------------------


class AutoDrafts:
    """ACF-IR drafts produced on first use and shared across instances of an indicator."""

    def __init__(self, prompts: PromptLibrary = DEFAULT):
        self.prompts = prompts
        self._drafts: dict[tuple[str, str, str], EnhancementDraft] = {}
        self._locks: dict[tuple[str, str, str], threading.Lock] = {}
        self._guard = threading.Lock()

    def get(self, indicator: Indicator, llm) -> EnhancementDraft:
        inner = getattr(llm, "inner", llm)
        key = (indicator.id, inner.model_id, getattr(inner, "run_tag", ""))
        with self._guard:
            lock = self._locks.setdefault(key, threading.Lock())
        with lock:
            if key not in self._drafts:
                self._drafts[key] = enhance_indicator(indicator, llm, EnhanceMode.AUTO, self.prompts)
            return self._drafts[key]


def validate_config(cfg: MethodConfig, indicator: Indicator, exemplars: Mapping[str, Exemplar]) -> None:
    if cfg.shots == 1 and indicator.id not in exemplars:
        raise ConfigError(f"one-shot {cfg.method.value} needs an exemplar for indicator {indicator.id}")
    if cfg.method is Method.CFIR and not indicator.enhanced:
        raise ConfigError(f"indicator {indicator.id} has no approved facts and rules; CF-IR is unavailable")


def _single_prompt(instance, indicator, cfg, llm, prompts, exemplar) -> str:
    name = "cot" if cfg.method is Method.COT else "standard"
    prompt = prompts.render(
        name,
        instruction=indicator.instruction_standard or indicator.rule,
        note=instance.patient_note,
        question=instance.question or indicator.rule,
    )
    if exemplar is not None:
        prompt = _example_block(prompts, exemplar, exemplar.output) + prompt
    return llm.ask(prompt).text


def run_instance(instance: PatientInstance, indicator: Indicator, cfg: MethodConfig, llm: ModelClient,
                 prompts: PromptLibrary = DEFAULT, exemplars: Mapping[str, Exemplar] | None = None,
                 auto_drafts: AutoDrafts | None = None, fact_width: int = 1) -> RunRecord:
    """Answer one instance under ``cfg``.

    Model and rule failures are recorded on the returned record.  Invalid
    configurations raise ``ConfigError`` before any model call, and a replay
    fixture miss propagates as ``FixtureMiss``.
    """
    exemplars = exemplars or {}
    validate_config(cfg, indicator, exemplars)
    exemplar = exemplars.get(indicator.id) if cfg.shots == 1 else None
    client = RecordingClient(llm)
    base = dict(
        instance_id=instance.unique_id,
        indicator_id=indicator.id,
        method=cfg.method,
        shots=cfg.shots,
        model_id=llm.model_id,
        run_tag=getattr(llm, "run_tag", ""),
        reasoning_mode=cfg.reasoning_mode if cfg.uses_facts else None,
    )

    def failed(exc: Exception, **extra) -> RunRecord:
        return RunRecord(raw_response=extra.pop("raw", ""), parsed_answer=TruthValue.UNKNOWN, definite=False,
                         latency_ms=client.latency_ms, error=f"{type(exc).__name__}: {exc}", **base, **extra)

    if not cfg.uses_facts:
        try:
            text = _single_prompt(instance, indicator, cfg, client, prompts, exemplar)
        except FixtureMiss:
            raise
        except BackendError as exc:
            return failed(exc)
        parsed = parse_final_answer(text)
        return RunRecord(raw_response=text, parsed_answer=parsed, definite=parsed.definite,
                         latency_ms=client.latency_ms, **base)

    if cfg.method is Method.ACFIR:
        try:
            draft = (auto_drafts or AutoDrafts(prompts)).get(indicator, client)
            indicator = merge_draft(indicator, draft)
        except FixtureMiss:
            raise
        except (EnhancementError, BackendError) as exc:
            return failed(exc)

    try:
        check = verify_all_facts(instance, indicator, client, prompts, exemplar, fact_width, cfg.batch_facts)
    except FixtureMiss:
        raise
    try:
        values, explanation = reason_rules(check.bindings, indicator, cfg.reasoning_mode, client, prompts, exemplar)
    except FixtureMiss:
        raise
    except (BackendError, RuleError, MqcicError) as exc:
        return failed(exc, fact_verifications=tuple(check.verifications), degraded=check.degraded)
    answer, definite = final_answer(values)
    return RunRecord(
        raw_response=explanation,
        parsed_answer=TruthValue.of(answer),
        definite=definite,
        fact_verifications=tuple(check.verifications),
        rule_values=tuple(values),
        rule_trace=explanation,
        latency_ms=client.latency_ms,
        degraded=check.degraded,
        **base,
    )


def run_corpus(corpus: Corpus, cfg: MethodConfig, llm: ModelClient, prompts: PromptLibrary = DEFAULT,
               exemplars: Mapping[str, Exemplar] | None = None, width: int = 1,
               on_record: Callable[[RunRecord], None] | None = None,
               instances: Iterable[PatientInstance] | None = None) -> list[RunRecord]:
    """Run every instance with bounded parallelism; records come back in corpus order."""
    exemplars = exemplars or {}
    if cfg.shots == 1:
        check_exemplars(exemplars, corpus)
    todo = list(instances if instances is not None else corpus.instances)
    for inst in todo:
        validate_config(cfg, corpus.indicator_of(inst), exemplars)
    drafts = AutoDrafts(prompts)

    def one(inst: PatientInstance) -> RunRecord:
        return run_instance(inst, corpus.indicator_of(inst), cfg, llm, prompts, exemplars, drafts)

    records = []
    if width <= 1:
        for inst in todo:
            rec = one(inst)
            records.append(rec)
            if on_record:
                on_record(rec)
        return records
    with ThreadPoolExecutor(max_workers=width) as pool:
        for rec in pool.map(one, todo):
            records.append(rec)
            if on_record:
                on_record(rec)
    return records


# --- isolated ability probes --------------------------------------------------------


@dataclass(frozen=True)
class FactProbe:
    instance_id: str
    fact_id: str
    predicted: FactValue
    gold: FactValue
    reasoning: str

    @property
    def exact(self) -> bool:
        return self.predicted.same_as(self.gold)


def probe_fact_verification(corpus: Corpus, llm: ModelClient, prompts: PromptLibrary = DEFAULT,
                            width: int = 1) -> list[FactProbe]:
    """Verify each gold fact on its own, with no other fact in the prompt."""
    jobs = []
    for inst in corpus.instances:
        ind = corpus.indicator_of(inst)
        for g in inst.gold_facts:
            fact = ind.fact(g.fact_id)
            if fact is not None:
                jobs.append((inst, fact, g.value))

    def one(job) -> FactProbe:
        inst, fact, gold = job
        value, reasoning = verify_fact(inst.patient_note, fact, inst.question or corpus.indicator_of(inst).rule,
                                       llm, prompts)
        return FactProbe(inst.unique_id, fact.fact_id, value, gold, reasoning)

    if width <= 1:
        return [one(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=width) as pool:
        return list(pool.map(one, jobs))


def probe_rule_reasoning(corpus: Corpus, llm: ModelClient | None, mode: ReasoningMode,
                         prompts: PromptLibrary = DEFAULT) -> list[RunRecord]:
    """Reason over the gold facts only, so every error is a reasoning error."""
    mode = ReasoningMode(mode)
    records = []
    for inst in corpus.instances:
        ind = corpus.indicator_of(inst)
        if not ind.enhanced:
            continue
        client = RecordingClient(llm) if llm is not None else None
        gold = inst.gold_bindings
        verifications = tuple(FactVerification(f.fact_id, gold.get(f.fact_id, UNKNOWN), "gold") for f in ind.facts)
        base = dict(instance_id=inst.unique_id, indicator_id=ind.id, method=Method.CFIR, shots=0,
                    model_id=llm.model_id if llm else "symbolic", reasoning_mode=mode,
                    fact_verifications=verifications)
        try:
            values, explanation = reason_rules(gold, ind, mode, client, prompts)
        except FixtureMiss:
            raise
        except MqcicError as exc:
            records.append(RunRecord(raw_response="", parsed_answer=TruthValue.UNKNOWN, definite=False,
                                     error=f"{type(exc).__name__}: {exc}", **base))
            continue
        answer, definite = final_answer(values)
        records.append(RunRecord(raw_response=explanation, parsed_answer=TruthValue.of(answer), definite=definite,
                                 rule_values=tuple(values), rule_trace=explanation,
                                 latency_ms=client.latency_ms if client else 0, **base))
    return records
