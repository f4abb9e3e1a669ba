import json

import httpx
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mqcic.answers import parse_final_answer
from mqcic.errors import BackendError, FixtureMiss, UnparseableJudgment
from mqcic.gateway import (
    ChatRequest,
    ChatResponse,
    Gateway,
    GenerationParams,
    ModelClient,
    OpenAIBackend,
    ResponseCache,
    RetryPolicy,
    ScriptedBackend,
    cache_key,
    default_params,
    parse_judgment,
)
from mqcic.prompts import DEFAULT, NAMES, PromptLibrary
from mqcic.values import TruthValue

T, F, U = TruthValue.TRUE, TruthValue.FALSE, TruthValue.UNKNOWN


# --- answer extraction ----------------------------------------------------------


@pytest.mark.parametrize("raw,expected", [
    ('...Therefore, the answer is "Yes"', T),
    ("Answer: False", F),
    ("I cannot determine this.", U),
    ("Yes", T),
    ("答案：否", F),
    ("The answer is **correct**", T),
    ("Options are True or False. Final answer: False", F),
    ("Answer: True\nOn reflection, the answer is No.", F),
    ("Yesterday the patient improved.", U),
    ("", U),
])
def test_parse_final_answer(raw, expected):
    assert parse_final_answer(raw) is expected


@given(st.text())
def test_parse_final_answer_is_total(raw):
    assert parse_final_answer(raw) in (T, F, U)


@given(st.text())
def test_appending_answer_yes_wins(raw):
    assert parse_final_answer(raw + "\nAnswer: Yes") is T


# --- requests and cache -----------------------------------------------------------


def test_default_params():
    p = default_params()
    assert (p.max_new_tokens, p.repetition_penalty, p.temperature) == (1024, 1.2, 0.001)


def test_invalid_params():
    with pytest.raises(ValueError):
        GenerationParams(max_new_tokens=0)


def test_cache_key_is_stable_and_sensitive():
    a = ChatRequest.of("m", "hello")
    assert cache_key(a) == cache_key(ChatRequest.of("m", "hello"))
    assert cache_key(a) != cache_key(ChatRequest.of("m", "hello!"))
    assert cache_key(a) != cache_key(ChatRequest.of("m", "hello", run_tag="run1"))
    assert cache_key(a) != cache_key(ChatRequest.of("m", "hello", params=GenerationParams(seed=1)))
    assert len(a.key) == 64


def test_request_validation():
    with pytest.raises(ValueError):
        ChatRequest("m", ())


def test_cache_round_trip(tmp_path):
    cache = ResponseCache(tmp_path)
    req = ChatRequest.of("m", "q")
    cache.put(req, ChatResponse("a", {"prompt_tokens": 3}, 5, "b"))
    hit = cache.get(req.key)
    assert hit.text == "a" and hit.cached and hit.latency_ms == 5
    entry = json.loads(cache.path(req.key).read_text())
    assert entry["request"]["messages"] == [["user", "q"]]
    assert cache.keys() == [req.key]


def test_gateway_caches(tmp_path):
    calls = []
    gw = Gateway(ScriptedBackend(lambda r: calls.append(r) or "x"), ResponseCache(tmp_path))
    req = ChatRequest.of("m", "q")
    assert gw.complete(req).text == "x"
    assert gw.complete(req).text == "x"
    assert len(calls) == 1 and gw.cache_hits == 1 and gw.backend_calls == 1


def test_replay_only_never_calls_backend(tmp_path):
    cache = ResponseCache(tmp_path)
    req = ChatRequest.of("m", "q")
    cache.prime(req, "recorded")
    gw = Gateway(ScriptedBackend(lambda r: pytest.fail("backend called")), cache, replay_only=True)
    assert gw.complete(req).text == "recorded"
    with pytest.raises(FixtureMiss) as exc:
        gw.complete(ChatRequest.of("m", "other"))
    assert exc.value.key == ChatRequest.of("m", "other").key
    assert gw.backend_calls == 0


def test_gateway_without_backend_must_be_replay():
    with pytest.raises(ValueError):
        Gateway(None)


class Flaky:
    backend_id = "flaky"

    def __init__(self, failures):
        self.failures = list(failures)

    def send(self, req):
        if self.failures:
            raise BackendError(self.failures.pop(0), "boom")
        return ChatResponse("ok")


def test_retries_transient_errors():
    sleeps = []
    gw = Gateway(Flaky([503, None]), retry=RetryPolicy(3, (1, 4)), sleep=sleeps.append)
    assert gw.complete(ChatRequest.of("m", "q")).text == "ok"
    assert sleeps == [1, 4] and gw.backend_calls == 3


def test_gives_up_after_attempts():
    gw = Gateway(Flaky([500, 500, 500]), sleep=lambda s: None)
    with pytest.raises(BackendError):
        gw.complete(ChatRequest.of("m", "q"))


def test_client_errors_are_not_retried():
    sleeps = []
    gw = Gateway(Flaky([400]), sleep=sleeps.append)
    with pytest.raises(BackendError) as exc:
        gw.complete(ChatRequest.of("m", "q"))
    assert exc.value.status == 400 and sleeps == []


def test_openai_backend_payload_and_parsing():
    seen = {}

    def handler(request: httpx.Request):
        seen["url"] = str(request.url)
        seen["auth"] = request.headers.get("authorization")
        seen["body"] = json.loads(request.content)
        return httpx.Response(200, json={"choices": [{"message": {"content": "Answer: True"}}],
                                         "usage": {"prompt_tokens": 7, "completion_tokens": 2}})

    backend = OpenAIBackend("http://llm.local/v1/", "k", client=httpx.Client(transport=httpx.MockTransport(handler)))
    resp = backend.send(ChatRequest.of("qwen", "hi", system="sys"))
    assert resp.text == "Answer: True" and resp.usage["prompt_tokens"] == 7
    assert seen["url"] == "http://llm.local/v1/chat/completions"
    assert seen["auth"] == "Bearer k"
    body = seen["body"]
    assert body["max_tokens"] == 1024 and body["temperature"] == 0.001 and body["repetition_penalty"] == 1.2
    assert body["messages"] == [{"role": "system", "content": "sys"}, {"role": "user", "content": "hi"}]


@pytest.mark.parametrize("response", [
    httpx.Response(429, text="slow down"),
    httpx.Response(200, text="not json"),
])
def test_openai_backend_errors(response):
    backend = OpenAIBackend("http://x", client=httpx.Client(transport=httpx.MockTransport(lambda r: response)))
    with pytest.raises(BackendError):
        backend.send(ChatRequest.of("m", "q"))


def test_openai_backend_transport_error():
    def boom(request):
        raise httpx.ConnectError("refused")

    backend = OpenAIBackend("http://x", client=httpx.Client(transport=httpx.MockTransport(boom)))
    with pytest.raises(BackendError) as exc:
        backend.send(ChatRequest.of("m", "q"))
    assert exc.value.status is None


@pytest.mark.parametrize("raw,bit", [("1", 1), (" 0.", 0), ("Score: 1", 1), ("The answer is Yes", 1),
                                     ("**0**", 0)])
def test_parse_judgment(raw, bit):
    assert parse_judgment(raw) == bit


def test_unparseable_judgment():
    with pytest.raises(UnparseableJudgment):
        parse_judgment("It depends.")


def test_model_client_binds_model_and_tag():
    gw = Gateway(ScriptedBackend(lambda r: r.model_id + "|" + r.run_tag))
    assert ModelClient(gw, "m1", run_tag="t").ask("q").text == "m1|t"


# --- prompt assets ----------------------------------------------------------------


def test_all_prompt_assets_present():
    assert set(DEFAULT.hashes()) == set(NAMES)


def test_prompt_edit_changes_hash_and_cache_key():
    lib = PromptLibrary()
    edited = lib.with_override("standard", lib.raw("standard").replace("Patient", "patient", 1))
    assert edited.hashes()["standard"] != lib.hashes()["standard"]
    assert edited.hashes()["cot"] == lib.hashes()["cot"]
    kw = dict(instruction="i", note="n", question="q")
    assert (ChatRequest.of("m", lib.render("standard", **kw)).key
            != ChatRequest.of("m", edited.render("standard", **kw)).key)


def test_prompt_override_directory(tmp_path):
    (tmp_path / "cot.txt").write_text("custom $note", encoding="utf-8")
    lib = PromptLibrary.from_directory(tmp_path)
    assert lib.render("cot", note="N") == "custom N"
    assert lib.raw("standard") == DEFAULT.raw("standard")


def test_missing_placeholder_value_raises():
    with pytest.raises(KeyError):
        DEFAULT.render("standard", note="n")
