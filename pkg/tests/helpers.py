"""Scripted model used across tests.

``FixtureModel`` answers every prompt family the package sends (fact
verification, direct answering, rule reasoning, enhancement, judging) from
the JSON files in tests/data, so whole runs can be recorded into a cache and
replayed without a network.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

from mqcic.engine import parse_fact_value
from mqcic.gateway import ChatRequest, Gateway, ModelClient, ResponseCache, ScriptedBackend
from mqcic.model import Corpus, load_corpus
from mqcic.rules import evaluate, final_answer
from mqcic.values import UNKNOWN

DATA = Path(__file__).parent / "data"
INDICATORS = DATA / "indicators.json"
RAW_INDICATORS = DATA / "raw_indicators.json"
INSTANCES = DATA / "instances.json"
EXEMPLARS = DATA / "exemplars.json"


def load_json(name: str):
    return json.loads((DATA / name).read_text(encoding="utf-8"))


def fixture_corpus() -> Corpus:
    return load_corpus(INDICATORS, INSTANCES)


def _split(req: ChatRequest) -> tuple[str | None, str]:
    system = next((m.content for m in req.messages if m.role == "system"), None)
    return system, req.messages[-1].content


class FixtureModel:
    """Deterministic stand-in for a chat model, keyed on prompt content."""

    def __init__(self, corpus: Corpus | None = None, replies: dict | None = None,
                 enhancement: dict | None = None, judge=None):
        self.corpus = corpus or fixture_corpus()
        self.replies = replies or load_json("scripted_replies.json")
        self.enhancement = enhancement or load_json("enhancement_replies.json")
        self.judge = judge or keyword_judge
        self.prompts: list[tuple[str | None, str]] = []

    def _instance(self, prompt: str):
        for inst in self.corpus.instances:
            if f"Patient note:\n{inst.patient_note}\n" in prompt:
                return inst
        raise AssertionError("prompt names no fixture instance")

    def _indicator_by_rule(self, prompt: str):
        for ind in self.corpus.indicators:
            if f"Numerator rule: {ind.rule}" in prompt:
                return ind
        raise AssertionError("prompt names no fixture indicator")

    def __call__(self, req: ChatRequest) -> str:
        system, prompt = _split(req)
        self.prompts.append((system, prompt))
        if system is not None:
            return self.judge(system, prompt)
        if "You are verifying one clinical fact" in prompt:
            inst = self._instance(prompt)
            fid = re.search(r"Clinical fact: (\w+)", prompt).group(1)
            return self.replies["facts"][inst.unique_id][fid]
        if "You are verifying clinical facts" in prompt:
            inst = self._instance(prompt)
            lines = []
            for fid, text in self.replies["facts"][inst.unique_id].items():
                last = text.strip().splitlines()[-1]
                lines.append(f"{fid} = {last.split(':', 1)[-1].split('=', 1)[-1].strip()}")
            return "\n".join(lines)
        if "applying quality-control rules" in prompt or "evaluating symbolic logical rules" in prompt:
            return self._reason(prompt)
        if "recall the medical background knowledge" in prompt:
            return self.enhancement[self._indicator_by_rule(prompt).id]["knowledge"]
        if "Break the numerator rule" in prompt:
            return self.enhancement[self._indicator_by_rule(prompt).id]["decompose"]
        if "write a templated clinical fact" in prompt:
            return self.enhancement[self._indicator_by_rule(prompt).id]["templatize"]
        if "Question:" in prompt:
            inst = self._instance(prompt)
            table = "cot" if "Let's think step by step" in prompt else "standard"
            return self.replies[table][inst.unique_id]
        raise AssertionError(f"unrecognised prompt: {prompt[:80]!r}")

    def _reason(self, prompt: str) -> str:
        """A faithful reasoner: reads the verified facts back and applies the rules."""
        symbolic = "evaluating symbolic logical rules" in prompt
        for ind in self.corpus.indicators:
            listing = ind.logical_rules.symbolic if symbolic else ind.logical_rules.natural_language
            if listing and all(f"Rule {i + 1}: {r}" in prompt for i, r in enumerate(listing)):
                break
        else:
            raise AssertionError("reasoning prompt matches no indicator")
        bindings = {}
        for f in ind.facts:
            key = f"{f.fact_id} = " if symbolic else f"- {f.description or f.fact_id}: "
            m = re.search(rf"^{re.escape(key)}(.*)$", prompt, re.MULTILINE)
            bindings[f.fact_id] = parse_fact_value(m.group(1), f, segment_only=True) if m else UNKNOWN
        values = [evaluate(e, bindings) for e in ind.parsed_rules()]
        answer, _ = final_answer(values)
        lines = [f"Rule {i + 1}: {v.value}" for i, v in enumerate(values)]
        return "Applying each rule to the facts.\n" + "\n".join(lines) + f"\nAnswer: {answer}"


def keyword_judge(system: str, subject: str) -> str:
    """Judges 1 when the response mentions the reference value (or its original text)."""
    ref = re.search(r"Reference fact: \w+ = (.*)", subject).group(1).strip()
    response = subject.split("Model response:\n", 1)[1].casefold()
    value = ref.casefold()
    if value in ("true", "false"):
        # boolean facts: accept the scripted bool words
        words = {"true": ("true", "是"), "false": ("false",)}[value]
        return "1" if any(w in response for w in words) else "0"
    return "1" if value.rstrip("%") in response else "0"


def queue_judge(outputs):
    """Judge replying with ``outputs`` in order."""
    it = iter(outputs)
    return lambda system, subject: str(next(it))


def scripted_client(responder, cache_dir=None, model_id="fixture-model", run_tag="", replay_only=False):
    cache = ResponseCache(cache_dir) if cache_dir else None
    if replay_only:
        gw = Gateway(None, cache, replay_only=True)
    else:
        gw = Gateway(ScriptedBackend(responder), cache, sleep=lambda s: None)
    return ModelClient(gw, model_id, run_tag=run_tag)


def scripted_services(cfg, responder):
    """``Services`` whose gateways talk to ``responder`` instead of HTTP, sharing the configured cache."""
    from mqcic.cli import Services

    class _Scripted(Services):
        def gateway(self, model_id):
            return self._gateways.setdefault("", Gateway(ScriptedBackend(responder), self.cache,
                                                         sleep=lambda s: None))

    return _Scripted(cfg)
