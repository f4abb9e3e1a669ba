"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line."""

import json
import random
import string
import time
from dataclasses import replace
from decimal import Decimal
from pathlib import Path

from mqcic.cli import AppConfig, Services, run_pipeline
from mqcic.engine import MethodConfig, load_exemplars, run_corpus, run_instance
from mqcic.enhancer import apply_review, decompose_rules, enhance_indicator, merge_draft
from mqcic.errors import DecompositionUnparseable
from mqcic.evaluation import CellKey, CellSummary, InstanceScore, Judge, accuracy, classify_error, fmt
from mqcic.evaluation import fact_correctness, fact_faithfulness
from mqcic.gateway import ChatRequest
from mqcic.model import (
    FactVerification,
    GoldFact,
    Method,
    PatientInstance,
    ReasoningMode,
    RunRecord,
    corpus_stats,
    dump_indicators,
    dump_instances,
    load_indicators,
    load_instances,
)
from mqcic.prompts import DEFAULT, NAMES
from mqcic.rules import And, Cmp, FactRef, Literal, Not, Or, brute_force_oracle, evaluate, fact_refs, parse_rule
from mqcic.values import UNKNOWN, FactValue, Kind, TruthValue

from helpers import (
    EXEMPLARS,
    INDICATORS,
    INSTANCES,
    RAW_INDICATORS,
    FixtureModel,
    fixture_corpus,
    keyword_judge,
    queue_judge,
    scripted_client,
    scripted_services,
)
from strategies import BOOL_FACTS, ENUM_VALUES, NUM_FACTS, all_assignments, enumerate_bool_exprs

T, F, U = TruthValue.TRUE, TruthValue.FALSE, TruthValue.UNKNOWN


# --- seeded random expressions with boolean, numeric and enum leaves ----------------


def random_leaf(rng: random.Random):
    r = rng.random()
    if r < 0.5:
        return FactRef(rng.choice(BOOL_FACTS), Kind.BOOLEAN)
    if r < 0.8:
        def operand():
            if rng.random() < 0.6:
                return FactRef(rng.choice(NUM_FACTS), Kind.NUMERIC, "%")
            return Literal(FactValue.num(rng.randint(-5, 30), "%"))
        return Cmp(rng.choice(["<", "<=", ">", ">=", "==", "!="]), operand(), operand())
    if r < 0.95:
        return Cmp(rng.choice(["==", "!="]), FactRef("kind", Kind.ENUM),
                   Literal(FactValue.enum(rng.choice(ENUM_VALUES))))
    return Literal(FactValue.bool(rng.random() < 0.5))


def random_expr(rng: random.Random, depth: int = 4):
    if depth <= 1 or rng.random() < 0.3:
        return random_leaf(rng)
    r = rng.random()
    if r < 0.2:
        return Not(random_expr(rng, depth - 1))
    children = tuple(random_expr(rng, depth - 1) for _ in range(rng.randint(2, 3)))
    return And(children) if r < 0.6 else Or(children)


def random_value(rng: random.Random, name: str, p_unknown: float = 0.3):
    if rng.random() < p_unknown:
        return UNKNOWN
    if name in BOOL_FACTS:
        return FactValue.bool(rng.random() < 0.5)
    if name in NUM_FACTS:
        return FactValue.num(rng.randint(-5, 30), "%")
    return FactValue.enum(rng.choice(ENUM_VALUES))


def random_binding(rng: random.Random):
    return {n: random_value(rng, n) for n in (*BOOL_FACTS, *NUM_FACTS, "kind")}


def refine(rng: random.Random, binding):
    return {k: random_value(rng, k, 0.3) if v.is_unknown else v for k, v in binding.items()}


# --- 1 -----------------------------------------------------------------------------


def test_criterion_1_oracle_equivalence(verdict):
    start = time.perf_counter()
    exprs = enumerate_bool_exprs(3)
    assignments = list(all_assignments())
    disagreements = sum(evaluate(e, a) is not brute_force_oracle(e, a) for e in exprs for a in assignments)
    exhaustive = len(exprs) * len(assignments)

    rng = random.Random(20240601)
    numeric_cases = 0
    for _ in range(10_000):
        e, b = random_expr(rng), random_binding(rng)
        numeric_cases += any(isinstance(n, Cmp) for n in _walk(e))
        disagreements += evaluate(e, b) is not brute_force_oracle(e, b)
    elapsed = time.perf_counter() - start
    ok = disagreements == 0 and elapsed < 30 and numeric_cases > 5000
    verdict(1, "rule evaluator matches brute-force oracle", ok,
            f"{exhaustive} exhaustive + 10000 random pairs, {disagreements} disagreements, {elapsed:.1f}s")


def _walk(e):
    yield e
    for c in getattr(e, "children", ()):
        yield from _walk(c)
    if isinstance(e, Not):
        yield from _walk(e.child)


# --- 2 -----------------------------------------------------------------------------


def test_criterion_2_kleene_properties(verdict):
    rng = random.Random(7)
    violations = 0
    for _ in range(10_000):
        e, b = random_expr(rng), random_binding(rng)
        v = evaluate(e, b)
        if v.definite and evaluate(e, refine(rng, b)) is not v:
            violations += 1
    for _ in range(10_000):
        p, q, b = random_expr(rng, 3), random_expr(rng, 3), random_binding(rng)
        violations += evaluate(Not(And((p, q))), b) is not evaluate(Or((Not(p), Not(q))), b)
        violations += evaluate(Not(Or((p, q))), b) is not evaluate(And((Not(p), Not(q))), b)
    verdict(2, "monotonicity and De Morgan", violations == 0, f"{violations} violations over 20000 cases")


# --- 3 -----------------------------------------------------------------------------


def test_criterion_3_pci_example_end_to_end(verdict, corpus, fixture_model):
    inst = next(i for i in corpus.instances if i.unique_id == "PCI-01_001")
    ind = corpus.indicator_of(inst)
    rec = run_instance(inst, ind, MethodConfig(Method.CFIR, reasoning_mode=ReasoningMode.SYMBOLIC),
                       scripted_client(fixture_model))
    facts_ok = rec.bindings == {"procedure": FactValue.enum("stent"), "residual_stenosis": FactValue.num(0, "%"),
                                "timi_grade": FactValue.num(2)}
    timi_rule = ind.logical_rules.symbolic.index("timi_grade == 3")
    ok = (facts_ok and rec.parsed_answer is F and rec.definite
          and rec.rule_values[timi_rule] is F and rec.rule_values[1 - timi_rule] is T
          and "timi_grade == 3 -> False" in rec.rule_trace)
    verdict(3, "stent, 0%, TIMI 2 gives False with the TIMI rule False", ok,
            f"answer={rec.parsed_answer.value}, rules={[v.value for v in rec.rule_values]}")


# --- 4 -----------------------------------------------------------------------------


def _synthetic_instance(m: int) -> PatientInstance:
    gold = tuple(GoldFact(f"f{j}", f"text {j}", FactValue.bool(True)) for j in range(m))
    return PatientInstance("SYN_1", "note", True, gold_facts=gold)


def _record(iid, answer, definite=True, facts=(), raw="Answer", method=Method.CFIR,
            mode=ReasoningMode.LLM_NL, rule_values=(), error=None):
    return RunRecord(
        instance_id=iid, indicator_id=iid.rsplit("_", 1)[0], method=method, shots=0, model_id="m",
        raw_response=raw, parsed_answer=answer, definite=definite,
        reasoning_mode=mode if method in (Method.CFIR, Method.ACFIR) else None,
        fact_verifications=tuple(FactVerification(k, v, "r") for k, v in dict(facts).items()),
        rule_values=tuple(rule_values), error=error,
    )


def test_criterion_4_metric_arithmetic(verdict, corpus):
    cases = [([1, 1, 0, 1], Decimal("0.75")), ([1, 0], Decimal("0.5")), ([0, 0, 0], Decimal(0)),
             ([1, 0, 1], Decimal(2) / Decimal(3)), ([1, 1, 1, 1, 1], Decimal(1))]
    results = []
    for vector, expected in cases:
        inst = _synthetic_instance(len(vector))
        rec = _record("SYN_1", T)
        for metric in (fact_correctness, fact_faithfulness):
            judge = Judge(scripted_client(FixtureModel(corpus, judge=queue_judge(vector))))
            results.append(metric(rec, inst, judge) == expected)

    # hand count over the scripted standard replies: 002, 003, 004, PD-03_002, PD-03_003, ICH-07_001
    records = run_corpus(corpus, MethodConfig(Method.STANDARD), scripted_client(FixtureModel(corpus)))
    acc = accuracy(records, corpus.instances)
    ok = all(results) and acc == Decimal("0.6")
    verdict(4, "fact metrics and micro-averaged accuracy are exact", ok,
            f"{sum(results)}/{len(results)} judge vectors exact, accuracy={acc}")


# --- 5 -----------------------------------------------------------------------------


def _taxonomy_set(corpus):
    """Thirty incorrect records with known earliest-error classes."""
    by_id = {i.unique_id: i for i in corpus.instances}
    cases = []
    wrong_answer = {True: F, False: T}
    for inst in corpus.instances:
        gold = inst.gold_bindings
        bad = dict(gold)
        fid = next(iter(bad))
        current = bad[fid]
        if current.kind is Kind.BOOLEAN:
            bad[fid] = FactValue.bool(not current.value)
        elif current.kind is Kind.NUMERIC:
            bad[fid] = FactValue.num(current.value + 7, current.unit)
        else:
            bad[fid] = UNKNOWN
        n_rules = len(corpus.indicator_of(inst).logical_rules.symbolic)
        wrong = wrong_answer[inst.label]
        # A: a verified fact differs from the gold fact
        cases.append((_record(inst.unique_id, wrong, facts=bad, rule_values=[wrong] * n_rules), inst, "A"))
        # B: facts right, the model's rule verdicts wrong
        cases.append((_record(inst.unique_id, wrong, facts=gold, rule_values=[wrong] * n_rules,
                              raw="Rule 1: ..."), inst, "B"))
        # C: facts right, nothing usable came back from reasoning
        cases.append((_record(inst.unique_id, U, False, facts=gold, raw="", error="BackendError: 503"), inst, "C"))
    assert len(cases) == 30 and set(by_id) == {c[1].unique_id for c in cases}
    return cases


def test_criterion_5_error_taxonomy(verdict, corpus):
    judge = Judge(scripted_client(FixtureModel(corpus, judge=keyword_judge)))
    cases = _taxonomy_set(corpus)
    hits = sum(classify_error(rec, inst, judge) == expected for rec, inst, expected in cases)

    # direct answers go through the judge: PCI-01_001 gold is stent, 0%, TIMI 2
    pci = next(i for i in corpus.instances if i.unique_id == "PCI-01_001")
    direct = [
        (_record("PCI-01_001", T, raw="Stent, residual 0%, TIMI 2. Answer: Yes", method=Method.STANDARD), "B"),
        (_record("PCI-01_001", T, raw="A stent was placed. Answer: Yes", method=Method.STANDARD), "A"),
    ]
    direct_hits = sum(classify_error(r, pci, judge) == e for r, e in direct)

    layout = [InstanceScore(str(i), False, error_class="A") for i in range(17)]
    layout += [InstanceScore(str(i), False, error_class="B") for i in range(17, 22)]
    layout += [InstanceScore(str(i), True) for i in range(22, 100)]
    cell = CellSummary.of(CellKey("m", "cfir", 0, "llm-nl"), layout)
    row = (fmt(cell.rate_a), fmt(cell.rate_b), fmt(cell.rate_c), fmt(cell.total_error))
    partition = cell.total_error == cell.rate_a + cell.rate_b + cell.rate_c
    ok = hits == 30 and direct_hits == 2 and row == ("0.17", "0.05", "0.00", "0.22") and partition
    verdict(5, "error classes and Total = A + B + C", ok,
            f"{hits}/30 classified, {direct_hits}/2 judged, row {' + '.join(row[:3])} -> {row[3]}")


# --- 6 -----------------------------------------------------------------------------

SPECS = ["standard", "cot", "cot:1", "cfir", "cfir:0:llm-nl", "cfir:1:llm-sy", "acfir"]


def _replay(cache: Path, out: Path, prompts_dir: str = "") -> tuple[Path, int]:
    cfg = AppConfig(cache_dir=str(cache), replay_only=True, judge_model="judge", prompts_dir=prompts_dir)
    services = Services(cfg)
    run_pipeline(cfg, fixture_corpus(), ["fixture-model"], SPECS, out, exemplars=load_exemplars(EXEMPLARS),
                 judge_model="judge", services=services)
    return out, services.backend_calls


def test_criterion_6_replay_determinism(verdict, tmp_path, fixture_model):
    cache = tmp_path / "cache"
    record_cfg = AppConfig(cache_dir=str(cache), judge_model="judge")
    run_pipeline(record_cfg, fixture_corpus(), ["fixture-model"], SPECS, tmp_path / "recording",
                 exemplars=load_exemplars(EXEMPLARS), judge_model="judge",
                 services=scripted_services(record_cfg, fixture_model))

    a, calls_a = _replay(cache, tmp_path / "replay_a")
    b, calls_b = _replay(cache, tmp_path / "replay_b")
    same = all((a / f).read_bytes() == (b / f).read_bytes() for f in ("report.csv", "report.md"))
    statuses = [c["status"] for c in json.loads((a / "manifest.json").read_text())["cells"]]
    recorded = (tmp_path / "recording" / "report.csv").read_bytes() == (a / "report.csv").read_bytes()

    # every asset: one flipped character changes the key of the request it renders
    changed = 0
    for name in NAMES:
        raw = DEFAULT.raw(name)
        i = next(k for k in range(len(raw) - 1, -1, -1) if raw[k].isalpha() and raw[k - 1] == " ")
        edited = DEFAULT.with_override(name, raw[:i] + raw[i].swapcase() + raw[i + 1:])
        fields = {k: "x" for k in _placeholders(raw)}
        changed += (ChatRequest.of("m", DEFAULT.render(name, **fields)).key
                    != ChatRequest.of("m", edited.render(name, **fields)).key)

    # end to end: editing the cot asset misses exactly the cot cells on replay
    prompts_dir = tmp_path / "prompts"
    prompts_dir.mkdir()
    cot = DEFAULT.raw("cot")
    (prompts_dir / "cot.txt").write_text(cot.replace("step by step", "step by Step", 1), encoding="utf-8")
    c, calls_c = _replay(cache, tmp_path / "replay_c", str(prompts_dir))
    cells = {(x["method"], x["shots"]): x["status"] for x in json.loads((c / "manifest.json").read_text())["cells"]}
    absent = sorted(k for k, s in cells.items() if s == "absent")
    rows_a = [r for r in (a / "report.csv").read_text().splitlines() if ",cot," not in r]
    rows_c = [r for r in (c / "report.csv").read_text().splitlines() if ",cot," not in r]

    ok = (same and recorded and calls_a == calls_b == calls_c == 0 and set(statuses) == {"ok"}
          and changed == len(NAMES) and absent == [("cot", 0), ("cot", 1)] and rows_a == rows_c)
    verdict(6, "replay is byte-identical and offline; prompt edits change keys", ok,
            f"{len(statuses)} cells, backend calls {calls_a}/{calls_b}, {changed}/{len(NAMES)} assets re-keyed, "
            f"absent after cot edit: {absent}")


def _placeholders(template: str) -> set[str]:
    return {m.group("named") or m.group("braced") for m in string.Template.pattern.finditer(template)
            if m.group("named") or m.group("braced")}


# --- 7 -----------------------------------------------------------------------------


def test_criterion_7_enhancement_coverage(verdict, fixture_model):
    llm = scripted_client(fixture_model)
    covered = []
    for ind in load_indicators(RAW_INDICATORS):
        draft = apply_review(enhance_indicator(ind, llm), "approve")
        merged = merge_draft(ind, draft)
        referenced = {fid for s in merged.logical_rules.symbolic for fid in fact_refs(parse_rule(s))}
        covered.append(referenced == {f.fact_id for f in merged.facts})
    pd03 = next(i for i in load_indicators(RAW_INDICATORS) if i.id == "PD-03")

    def rejects(sy, needle):
        body = json.dumps({"natural_language": ["x"], "symbolic": [sy]})
        client = scripted_client(lambda req: body)
        try:
            decompose_rules(pd03, "", client)
        except DecompositionUnparseable as exc:
            return needle in str(exc)
        return False

    rejected = [rejects("anxiety_screening AND", "expected"), rejects("true", "bare literal"),
                rejects("3 > 2", "no facts")]
    ok = all(covered) and all(rejected)
    verdict(7, "approved drafts cover their facts; bad decompositions rejected", ok,
            f"{sum(covered)}/{len(covered)} drafts covered, {sum(rejected)}/3 rejections")


# --- 8 -----------------------------------------------------------------------------


def test_criterion_8_schema_fidelity(verdict):
    ind_raw = json.loads(INDICATORS.read_text(encoding="utf-8"))
    inst_raw = json.loads(INSTANCES.read_text(encoding="utf-8"))
    ind_again = json.loads(dump_indicators(load_indicators(INDICATORS)))
    inst_text = dump_instances(load_instances(INSTANCES))
    spelled = '"patient note"' in inst_text and '"explaination"' in inst_text
    lossless = ind_again == ind_raw and json.loads(inst_text) == inst_raw

    counts = [1, 2, 3, 6]
    synthetic = [replace(_synthetic_instance(m), unique_id=f"SYN_{k}") for k, m in enumerate(counts)]
    stats = corpus_stats(synthetic)
    exact = (stats.count, stats.min_facts, stats.max_facts, stats.avg_facts) == (4, 1, 6, 3)
    ok = spelled and lossless and exact
    verdict(8, "schema round trip and corpus statistics", ok,
            f"lossless={lossless}, spellings kept={spelled}, min/max/avg={stats.min_facts}/{stats.max_facts}/"
            f"{stats.avg_facts}")
