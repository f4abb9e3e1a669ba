"""Command-line entry point.

Exit codes: 0 success, 1 domain error (bad data, missing fixture, failed
enhancement), 2 usage error.  Logs go to stderr; data goes to stdout or to
the files named by flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
from dataclasses import asdict, dataclass, field
from decimal import Decimal
from pathlib import Path
from typing import Any, Sequence

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .engine import (
    Exemplar,
    MethodConfig,
    load_exemplars,
    probe_fact_verification,
    probe_rule_reasoning,
    run_corpus,
)
from .enhancer import (
    DraftStatus,
    EnhanceMode,
    EnhancementDraft,
    ReviewDecision,
    apply_review,
    describe_draft,
    drafts_path,
    enhance_indicator,
    load_drafts,
    merge_draft,
    save_drafts,
)
from .errors import ConfigError, EnhancementError, FixtureMiss, MqcicError
from .evaluation import (
    CellKey,
    InstanceScore,
    Judge,
    accuracy,
    aggregate_indicator,
    build_report,
    fmt,
    score_records,
)
from .gateway import Gateway, GenerationParams, ModelClient, OpenAIBackend, ResponseCache
from .model import (
    Corpus,
    Method,
    ReasoningMode,
    RunRecord,
    corpus_stats,
    build_corpus,
    dumps,
    load_indicators,
    load_instances,
    load_records,
    read_json,
    write_atomic,
)
from .prompts import PromptLibrary

log = logging.getLogger("mqcic")

ENV_PREFIX = "MQCIC_"


# --- configuration -----------------------------------------------------------


@dataclass(frozen=True)
class BackendConfig:
    url: str
    api_key: str = ""
    models: tuple[str, ...] = ()

    def snapshot(self) -> dict[str, Any]:
        # the key itself never reaches a manifest
        return {"url": self.url, "api_key": "***" if self.api_key else "", "models": list(self.models)}


@dataclass(frozen=True)
class AppConfig:
    backends: dict[str, BackendConfig] = field(default_factory=dict)
    judge_model: str = ""
    cache_dir: str = ".mqcic-cache"
    data_dir: str = "."
    prompts_dir: str = ""
    width: int = 1
    replay_only: bool = False
    params: GenerationParams = field(default_factory=GenerationParams)

    def __post_init__(self):
        if self.width < 1:
            raise ConfigError("width must be >= 1")
        if self.replay_only and any(b.url for b in self.backends.values()):
            raise ConfigError("replay_only forbids backend URLs")

    def backend_for(self, model_id: str) -> BackendConfig | None:
        for b in self.backends.values():
            if model_id in b.models:
                return b
        return self.backends.get("default")

    def snapshot(self) -> dict[str, Any]:
        return {
            "backends": {k: v.snapshot() for k, v in sorted(self.backends.items())},
            "judge_model": self.judge_model,
            "cache_dir": self.cache_dir,
            "width": self.width,
            "replay_only": self.replay_only,
            "params": asdict(self.params),
        }


def _as_bool(value: Any) -> bool:
    if isinstance(value, bool):
        return value
    return str(value).strip().lower() in ("1", "true", "yes", "on")


def load_config(path: str | None, env: dict[str, str] | None = None, **flags: Any) -> AppConfig:
    """Config file, then ``MQCIC_*`` environment variables, then flags (highest)."""
    env = dict(os.environ if env is None else env)
    raw: dict[str, Any] = {}
    if path:
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    main = dict(raw.get("mqcic", {}))
    backends: dict[str, dict[str, Any]] = {k: dict(v) for k, v in raw.get("backends", {}).items()}

    for key in ("judge_model", "cache_dir", "data_dir", "prompts_dir", "width", "replay_only"):
        if ENV_PREFIX + key.upper() in env:
            main[key] = env[ENV_PREFIX + key.upper()]
    if ENV_PREFIX + "BASE_URL" in env:
        backends.setdefault("default", {})["url"] = env[ENV_PREFIX + "BASE_URL"]
    for name, b in backends.items():
        key_env = b.pop("api_key_env", None)
        if key_env and key_env in env:
            b["api_key"] = env[key_env]
    if ENV_PREFIX + "API_KEY" in env and "default" in backends:
        backends["default"]["api_key"] = env[ENV_PREFIX + "API_KEY"]

    for key, value in flags.items():
        if value is not None and key != "base_url":
            main[key] = value
    if flags.get("base_url"):
        backends.setdefault("default", {})["url"] = flags["base_url"]

    replay_only = _as_bool(main.get("replay_only", False))
    if replay_only and not flags.get("base_url"):
        # replay never talks to a backend, so configured URLs are dropped
        backends = {}
    try:
        params = GenerationParams(**raw.get("generation", {}))
        return AppConfig(
            backends={
                k: BackendConfig(str(v.get("url", "")), str(v.get("api_key", "")), tuple(v.get("models", ())))
                for k, v in backends.items()
            },
            judge_model=str(main.get("judge_model", "")),
            cache_dir=str(main.get("cache_dir", ".mqcic-cache")),
            data_dir=str(main.get("data_dir", ".")),
            prompts_dir=str(main.get("prompts_dir", "")),
            width=int(main.get("width", 1)),
            replay_only=replay_only,
            params=params,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


class Services:
    """Gateways and prompt assets built from one AppConfig."""

    def __init__(self, cfg: AppConfig):
        self.cfg = cfg
        self.cache = ResponseCache(cfg.cache_dir)
        self.prompts = PromptLibrary.from_directory(cfg.prompts_dir) if cfg.prompts_dir else PromptLibrary()
        self._gateways: dict[str, Gateway] = {}

    def gateway(self, model_id: str) -> Gateway:
        if self.cfg.replay_only:
            return self._gateways.setdefault("", Gateway(None, self.cache, replay_only=True))
        b = self.cfg.backend_for(model_id)
        if b is None or not b.url:
            raise ConfigError(f"no backend URL configured for model {model_id!r}")
        if b.url not in self._gateways:
            self._gateways[b.url] = Gateway(OpenAIBackend(b.url, b.api_key), self.cache)
        return self._gateways[b.url]

    def client(self, model_id: str, run_tag: str = "") -> ModelClient:
        return ModelClient(self.gateway(model_id), model_id, self.cfg.params, run_tag)

    def judge(self, model_id: str | None) -> Judge | None:
        model_id = model_id or self.cfg.judge_model
        return Judge(self.client(model_id), self.prompts) if model_id else None

    @property
    def backend_calls(self) -> int:
        return sum(g.backend_calls for g in self._gateways.values())


# --- helpers -------------------------------------------------------------------


def _emit(text: str, out: str | None) -> None:
    if out:
        write_atomic(out, text)
    else:
        sys.stdout.write(text)


def enhanced_indicators(indicators_path: str, semi_only: bool = True):
    """Indicators with their reviewed drafts merged in, if a drafts file exists."""
    indicators = load_indicators(indicators_path)
    dpath = drafts_path(indicators_path)
    if not dpath.exists():
        return indicators
    drafts = {d.indicator_id: d for d in load_drafts(dpath)}
    out = []
    for ind in indicators:
        d = drafts.get(ind.id)
        if d is not None and d.usable and (d.mode is EnhanceMode.SEMI or not semi_only):
            ind = merge_draft(ind, d)
        out.append(ind)
    return out


def _data_path(cfg: AppConfig, path: str) -> str:
    p = Path(path)
    if p.is_absolute() or p.exists():
        return path
    return str(Path(cfg.data_dir) / p)


def _corpus(args, cfg: AppConfig) -> Corpus:
    return build_corpus(enhanced_indicators(_data_path(cfg, args.indicators)),
                        load_instances(_data_path(cfg, args.instances)))


def run_tags(runs: int, salt: str) -> list[str]:
    if runs < 1:
        raise ConfigError("--runs must be >= 1")
    if runs == 1 and not salt:
        return [""]
    return [f"{salt}run{k}" for k in range(runs)]


def _method_config(method: str, shots: int, reasoning: str, model: str, params: GenerationParams,
                   batch: bool = False) -> MethodConfig:
    return MethodConfig(Method(method), shots, ReasoningMode(reasoning), model, params, batch)


def _exemplars(path: str | None) -> dict[str, Exemplar]:
    return load_exemplars(path) if path else {}


# --- subcommands ---------------------------------------------------------------


def cmd_ingest(args, cfg: AppConfig) -> int:
    corpus = _corpus(args, cfg)
    stats = corpus_stats(corpus.instances)
    out = {"indicators": len(corpus.indicators), **stats.as_dict()}
    sys.stdout.write(json.dumps(out, ensure_ascii=False, indent=2, default=str) + "\n")
    return 0


def cmd_enhance(args, cfg: AppConfig) -> int:
    services = Services(cfg)
    indicators = load_indicators(args.indicators)
    if args.only:
        wanted = set(args.only)
        indicators = [i for i in indicators if i.id in wanted]
    dpath = drafts_path(args.indicators)
    existing = {d.indicator_id: d for d in load_drafts(dpath)} if dpath.exists() else {}
    llm = services.client(args.model)
    failures = 0
    for ind in indicators:
        if ind.id in existing and not args.force:
            log.info("draft for %s exists, skipping", ind.id)
            continue
        try:
            existing[ind.id] = enhance_indicator(ind, llm, EnhanceMode(args.mode), services.prompts)
        except FixtureMiss:
            raise
        except EnhancementError as exc:
            failures += 1
            log.error("enhancement of %s failed: %s", ind.id, exc)
    order = [i.id for i in load_indicators(args.indicators)]
    save_drafts(dpath, sorted(existing.values(), key=lambda d: order.index(d.indicator_id)
                              if d.indicator_id in order else len(order)))
    log.info("drafts written to %s", dpath)
    return 1 if failures else 0


def _read_edit(path: str) -> EnhancementDraft:
    return EnhancementDraft.from_json(read_json(path))


def cmd_review(args, cfg: AppConfig) -> int:
    dpath = drafts_path(args.indicators)
    if not dpath.exists():
        raise ConfigError(f"no drafts at {dpath}; run enhance first")
    indicators = {i.id: i for i in load_indicators(args.indicators)}
    drafts = load_drafts(dpath)
    scripted = read_json(args.decisions) if args.decisions else None
    for k, draft in enumerate(drafts):
        if draft.status is not DraftStatus.PENDING:
            continue
        if scripted is not None:
            entry = scripted.get(draft.indicator_id)
            if entry is None:
                continue
            decision = ReviewDecision(entry["decision"])
            edited = EnhancementDraft.from_json(entry["edited"]) if "edited" in entry else None
            drafts[k] = apply_review(draft, decision, entry.get("note", ""), edited)
        else:
            print(describe_draft(draft, indicators.get(draft.indicator_id)))
            try:
                answer = input("[a]pprove / [e]dit / [r]eject / [s]kip / [q]uit: ").strip().lower()
            except EOFError:
                break
            if answer.startswith("q"):
                break
            if answer.startswith("s") or not answer:
                continue
            note = input("note: ").strip() if sys.stdin.isatty() else ""
            if answer.startswith("a"):
                drafts[k] = apply_review(draft, ReviewDecision.APPROVE, note)
            elif answer.startswith("r"):
                drafts[k] = apply_review(draft, ReviewDecision.REJECT, note)
            elif answer.startswith("e"):
                edited = _read_edit(input("edited draft JSON file: ").strip())
                drafts[k] = apply_review(draft, ReviewDecision.EDIT, note, edited)
        # persist after every decision so an interrupted review keeps its progress
        save_drafts(dpath, drafts)
    save_drafts(dpath, drafts)
    return 0


def cmd_run(args, cfg: AppConfig) -> int:
    services = Services(cfg)
    corpus = _corpus(args, cfg)
    exemplars = _exemplars(args.exemplars)
    mcfg = _method_config(args.method, args.shots, args.reasoning, args.model, cfg.params, args.batch_facts)
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout

    def write(rec: RunRecord) -> None:
        out.write(json.dumps(rec.to_json(), ensure_ascii=False, sort_keys=True) + "\n")
        out.flush()

    try:
        for tag in run_tags(args.runs, args.seed_salt):
            run_corpus(corpus, mcfg, services.client(args.model, tag), services.prompts, exemplars,
                       cfg.width, on_record=write)
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def _summary(scores: Sequence[InstanceScore]) -> dict[str, Any]:
    n = len(scores)
    key = CellKey("", "", 0)
    cell = build_report({key: scores}).cells[0]
    return {
        "n": n,
        "accuracy": fmt(cell.accuracy, 4),
        "fc": fmt(cell.fc, 4),
        "ff": fmt(cell.ff, 4),
        "type_a": fmt(cell.rate_a, 4),
        "type_b": fmt(cell.rate_b, 4),
        "type_c": fmt(cell.rate_c, 4),
        "total_error": fmt(cell.total_error, 4),
        "unresolved": cell.unresolved,
    }


def _cell_key(records: Sequence[RunRecord]) -> CellKey:
    r = records[0]
    return CellKey(r.model_id, r.method.value, r.shots, r.reasoning_mode.value if r.reasoning_mode else "")


def cmd_eval(args, cfg: AppConfig) -> int:
    services = Services(cfg)
    corpus = _corpus(args, cfg)
    records = load_records(args.records)
    if not records:
        raise ConfigError(f"{args.records} holds no records")
    judge = services.judge(args.judge_model)
    scores = score_records(records, corpus, judge, cfg.width)
    doc = {"cell": asdict(_cell_key(records)), "scores": [s.to_json() for s in scores]}
    if args.out:
        write_atomic(args.out, dumps(doc) + "\n")
    summary = _summary(scores)
    if judge is not None:
        summary["unparseable_judgments"] = judge.unparseable
    sys.stdout.write(json.dumps(summary, indent=2) + "\n")
    return 0


def cmd_aggregate(args, cfg: AppConfig) -> int:
    corpus = _corpus(args, cfg)
    records = load_records(args.records)
    targets = [corpus.indicator(args.indicator)] if args.indicator else corpus.indicators
    rows = []
    for ind in targets:
        agg = aggregate_indicator(records, corpus.instances_of(ind.id), ind)
        agg["proportion"] = None if agg["proportion"] is None else fmt(agg["proportion"], 4)
        rows.append(agg)
    sys.stdout.write(json.dumps(rows, ensure_ascii=False, indent=2) + "\n")
    return 0


def _load_score_doc(path: Path) -> tuple[CellKey, list[InstanceScore]]:
    doc = read_json(path)
    return CellKey(**doc["cell"]), [InstanceScore.from_json(s) for s in doc["scores"]]


def report_from_run_dir(run_dir: Path):
    manifest = read_json(run_dir / "manifest.json")
    groups: dict[CellKey, list[InstanceScore]] = {}
    absent: set[CellKey] = set()
    for cell in manifest["cells"]:
        key = CellKey(cell["model"], cell["method"], cell["shots"], cell["reasoning"])
        path = run_dir / "cells" / cell["name"] / "scores.json"
        if cell["status"] != "ok" or not path.exists():
            absent.add(key)
            continue
        groups.setdefault(key, []).extend(_load_score_doc(path)[1])
    absent -= set(groups)
    return build_report(groups, absent)


def cmd_report(args, cfg: AppConfig) -> int:
    if args.run_dir:
        table = report_from_run_dir(Path(args.run_dir))
    elif args.scores:
        groups: dict[CellKey, list[InstanceScore]] = {}
        for p in args.scores:
            key, scores = _load_score_doc(Path(p))
            groups.setdefault(key, []).extend(scores)
        table = build_report(groups)
    else:
        raise ConfigError("report needs --run-dir or --scores")
    _emit(table.render(args.format), args.out)
    return 0


# --- pipeline -------------------------------------------------------------------

_CELL_SPEC = re.compile(r"^(standard|cot|cfir|acfir)(?::([01]))?(?::(llm-nl|llm-sy|symbolic))?$")


def parse_method_spec(spec: str) -> tuple[str, int, str]:
    """``method[:shots[:reasoning]]``, e.g. ``cfir:1:symbolic``."""
    m = _CELL_SPEC.match(spec.strip())
    if not m:
        raise ConfigError(f"bad method spec {spec!r}; expected method[:shots[:reasoning]]")
    method, shots, reasoning = m.group(1), int(m.group(2) or 0), m.group(3) or ""
    if method in ("cfir", "acfir") and not reasoning:
        reasoning = "symbolic"
    if method not in ("cfir", "acfir"):
        reasoning = ""
    return method, shots, reasoning


def _cell_name(model: str, method: str, shots: int, reasoning: str, tag: str) -> str:
    parts = [model, f"{method}-{shots}shot"] + ([reasoning] if reasoning else []) + ([tag] if tag else [])
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", "__".join(parts))


def run_pipeline(cfg: AppConfig, corpus: Corpus, models: Sequence[str], specs: Sequence[str], out_dir: Path,
                 runs: int = 1, seed_salt: str = "", exemplars: dict[str, Exemplar] | None = None,
                 judge_model: str | None = None, services: Services | None = None) -> Path:
    """Run every (model, method, shots, run) cell, score it, and write the report files."""
    services = services or Services(cfg)
    exemplars = exemplars or {}
    judge = services.judge(judge_model)
    cells_dir = out_dir / "cells"
    cells = []
    for model in models:
        for spec in specs:
            method, shots, reasoning = parse_method_spec(spec)
            for tag in run_tags(runs, seed_salt):
                name = _cell_name(model, method, shots, reasoning, tag)
                entry = {"name": name, "model": model, "method": method, "shots": shots,
                         "reasoning": reasoning, "run_tag": tag, "status": "ok", "error": None}
                cells.append(entry)
                try:
                    mcfg = _method_config(method, shots, reasoning or "symbolic", model, cfg.params)
                    records = run_corpus(corpus, mcfg, services.client(model, tag), services.prompts,
                                         exemplars, cfg.width)
                    scores = score_records(records, corpus, judge, cfg.width)
                except MqcicError as exc:
                    entry["status"] = "absent"
                    entry["error"] = f"{type(exc).__name__}: {exc}"
                    log.warning("cell %s absent: %s", name, exc)
                    continue
                cdir = cells_dir / name
                cdir.mkdir(parents=True, exist_ok=True)
                write_atomic(cdir / "records.jsonl",
                             "".join(json.dumps(r.to_json(), ensure_ascii=False, sort_keys=True) + "\n"
                                     for r in records))
                doc = {"cell": {"model": model, "method": method, "shots": shots, "reasoning": reasoning},
                       "scores": [s.to_json() for s in scores]}
                write_atomic(cdir / "scores.json", dumps(doc) + "\n")
    manifest = {
        "version": __version__,
        "config": cfg.snapshot(),
        "judge_model": judge_model or cfg.judge_model,
        "prompt_hashes": services.prompts.hashes(),
        "exemplars": sorted(exemplars),
        "cells": cells,
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    write_atomic(out_dir / "manifest.json", dumps(manifest) + "\n")
    table = report_from_run_dir(out_dir)
    write_atomic(out_dir / "report.csv", table.to_csv())
    write_atomic(out_dir / "report.md", table.to_markdown())
    return out_dir


def cmd_pipeline(args, cfg: AppConfig) -> int:
    corpus = _corpus(args, cfg)
    services = Services(cfg)
    out = run_pipeline(cfg, corpus, args.models, args.methods, Path(args.out_dir), args.runs, args.seed_salt,
                       _exemplars(args.exemplars), args.judge_model, services)
    sys.stdout.write((out / "report.md").read_text(encoding="utf-8"))
    log.info("backend calls: %d", services.backend_calls)
    return 0


def cmd_ability(args, cfg: AppConfig) -> int:
    services = Services(cfg)
    corpus = _corpus(args, cfg)
    if args.probe == "facts":
        probes = probe_fact_verification(corpus, services.client(args.model), services.prompts, cfg.width)
        exact = sum(p.exact for p in probes)
        out = {"probe": "facts", "n": len(probes), "exact": exact,
               "exact_rate": fmt(Decimal(exact) / len(probes), 4) if probes else None}
    else:
        mode = ReasoningMode(args.reasoning)
        llm = None if mode is ReasoningMode.SYMBOLIC else services.client(args.model)
        records = probe_rule_reasoning(corpus, llm, mode, services.prompts)
        out = {"probe": "rules", "reasoning": mode.value, "n": len(records),
               "accuracy": fmt(accuracy(records, corpus.instances), 4) if records else None}
    sys.stdout.write(json.dumps(out, indent=2) + "\n")
    return 0


# --- argument parsing ---------------------------------------------------------


def _corpus_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--indicators", required=True, help="indicators JSON file")
    p.add_argument("--instances", required=True, help="instances JSON file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mqcic", description="Quality-control indicator computation with CF-IR.")
    parser.add_argument("--version", action="version", version=f"mqcic {__version__}")
    parser.add_argument("--config", help="TOML config file")
    parser.add_argument("--cache-dir")
    parser.add_argument("--base-url", help="OpenAI-compatible endpoint for the default backend")
    parser.add_argument("--replay-only", action="store_true", default=None,
                        help="serve every request from the cache; never contact a backend")
    parser.add_argument("--width", type=int, help="parallel requests")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a corpus and print statistics")
    _corpus_args(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("enhance", help="draft facts and logical rules for indicators")
    p.add_argument("--indicators", required=True)
    p.add_argument("--mode", choices=[m.value for m in EnhanceMode], default="semi")
    p.add_argument("--model", required=True)
    p.add_argument("--only", nargs="*", help="indicator ids to enhance")
    p.add_argument("--force", action="store_true", help="redo indicators that already have a draft")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("review", help="approve, edit or reject pending drafts")
    p.add_argument("--indicators", required=True)
    p.add_argument("--decisions", help="JSON file of scripted decisions keyed by indicator id")
    p.set_defaults(func=cmd_review)

    p = sub.add_parser("run", help="answer every instance with one method")
    _corpus_args(p)
    p.add_argument("--method", choices=[m.value for m in Method], required=True)
    p.add_argument("--shots", type=int, choices=[0, 1], default=0)
    p.add_argument("--reasoning", choices=[m.value for m in ReasoningMode], default="symbolic")
    p.add_argument("--model", required=True)
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--seed-salt", default="")
    p.add_argument("--exemplars", help="one-shot exemplars JSON")
    p.add_argument("--batch-facts", action="store_true", help="verify all facts in one prompt")
    p.add_argument("--out", help="JSON-lines output (default stdout)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="score run records")
    _corpus_args(p)
    p.add_argument("--records", required=True)
    p.add_argument("--judge-model")
    p.add_argument("--out", help="write per-instance scores JSON")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("aggregate", help="indicator numerator/denominator from run records")
    _corpus_args(p)
    p.add_argument("--records", required=True)
    p.add_argument("--indicator")
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("report", help="render a report table")
    p.add_argument("--run-dir")
    p.add_argument("--scores", nargs="*")
    p.add_argument("--format", choices=["csv", "md", "text"], default="text")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("pipeline", help="run, score and report a method matrix")
    _corpus_args(p)
    p.add_argument("--models", nargs="+", required=True)
    p.add_argument("--methods", nargs="+", required=True, help="method[:shots[:reasoning]] cells")
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--seed-salt", default="")
    p.add_argument("--exemplars")
    p.add_argument("--judge-model")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("ability", help="isolated fact-verification or rule-reasoning probe")
    _corpus_args(p)
    p.add_argument("--probe", choices=["facts", "rules"], required=True)
    p.add_argument("--reasoning", choices=[m.value for m in ReasoningMode], default="symbolic")
    p.add_argument("--model", default="")
    p.set_defaults(func=cmd_ability)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = load_config(args.config, cache_dir=args.cache_dir, base_url=args.base_url,
                          replay_only=args.replay_only, width=args.width)
        return args.func(args, cfg)
    except FixtureMiss as exc:
        print(f"error: no recorded response for cache key {exc.key}", file=sys.stderr)
        return 1
    except (MqcicError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 130


if __name__ == "__main__":
    sys.exit(main())
