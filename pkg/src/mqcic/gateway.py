"""Chat-completion gateway: content-addressed cache, retries, record/replay.

Every request is keyed by a SHA-256 over its canonical JSON (model, params,
messages and an optional run tag).  Cache entries are plain JSON files named
by that key, so a committed cache directory doubles as a replay fixture
store.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Protocol

import httpx

from .answers import parse_final_answer
from .errors import BackendError, FixtureMiss, UnparseableJudgment
from .model import write_atomic
from .values import TruthValue

log = logging.getLogger(__name__)

RETRY_STATUSES = frozenset({429, 500, 502, 503, 504})


@dataclass(frozen=True)
class GenerationParams:
    max_new_tokens: int = 1024
    repetition_penalty: float = 1.2
    temperature: float = 0.001
    seed: int | None = None

    def __post_init__(self):
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


def default_params() -> GenerationParams:
    return GenerationParams()


@dataclass(frozen=True)
class Message:
    role: str
    content: str


@dataclass(frozen=True)
class ChatRequest:
    model_id: str
    messages: tuple[Message, ...]
    params: GenerationParams = field(default_factory=default_params)
    run_tag: str = ""

    def __post_init__(self):
        if not self.messages:
            raise ValueError("a chat request needs at least one message")
        if self.messages[0].role not in ("system", "user"):
            raise ValueError("the first message must come from system or user")

    @classmethod
    def of(cls, model_id: str, prompt: str, system: str | None = None, **kw) -> "ChatRequest":
        msgs = [Message("system", system)] if system else []
        msgs.append(Message("user", prompt))
        return cls(model_id, tuple(msgs), **kw)

    def canonical(self) -> dict[str, Any]:
        return {
            "model_id": self.model_id,
            "params": asdict(self.params),
            "messages": [[m.role, m.content] for m in self.messages],
            "run_tag": self.run_tag,
        }

    @property
    def key(self) -> str:
        return cache_key(self)


def cache_key(req: ChatRequest) -> str:
    blob = json.dumps(req.canonical(), sort_keys=True, ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ChatResponse:
    text: str
    usage: dict[str, int] = field(default_factory=dict)
    latency_ms: int = 0
    backend_id: str = ""
    cached: bool = field(default=False, compare=False)

    def to_json(self) -> dict[str, Any]:
        return {"text": self.text, "usage": dict(self.usage), "latency_ms": self.latency_ms,
                "backend_id": self.backend_id}

    @classmethod
    def from_json(cls, data: dict[str, Any], cached: bool = False) -> "ChatResponse":
        return cls(data["text"], dict(data.get("usage") or {}), int(data.get("latency_ms", 0)),
                   data.get("backend_id", ""), cached)


class Backend(Protocol):
    backend_id: str

    def send(self, req: ChatRequest) -> ChatResponse: ...


class ResponseCache:
    """Directory of ``<key>.json`` entries; writes are atomic renames."""

    def __init__(self, directory: str | os.PathLike):
        self.directory = Path(directory)

    def path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def get(self, key: str) -> ChatResponse | None:
        p = self.path(key)
        try:
            entry = json.loads(p.read_text(encoding="utf-8"))
        except FileNotFoundError:
            return None
        return ChatResponse.from_json(entry["response"], cached=True)

    def put(self, req: ChatRequest, resp: ChatResponse) -> None:
        entry = {"key": req.key, "request": req.canonical(), "response": resp.to_json()}
        write_atomic(self.path(req.key), json.dumps(entry, ensure_ascii=False, indent=2) + "\n")

    def prime(self, req: ChatRequest, text: str) -> str:
        """Record a fixture response for ``req``; returns its key."""
        self.put(req, ChatResponse(text, backend_id="fixture"))
        return req.key

    def keys(self) -> list[str]:
        if not self.directory.exists():
            return []
        return sorted(p.stem for p in self.directory.glob("*.json"))


class OpenAIBackend:
    """OpenAI-compatible ``/chat/completions`` over HTTP(S)."""

    def __init__(self, base_url: str, api_key: str = "", timeout: float = 120.0,
                 client: httpx.Client | None = None, name: str = "openai"):
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.client = client or httpx.Client(timeout=timeout)
        self.backend_id = name

    def payload(self, req: ChatRequest) -> dict[str, Any]:
        p = req.params
        body: dict[str, Any] = {
            "model": req.model_id,
            "messages": [{"role": m.role, "content": m.content} for m in req.messages],
            "max_tokens": p.max_new_tokens,
            "temperature": p.temperature,
            # vLLM accepts repetition_penalty as an extra sampling field
            "repetition_penalty": p.repetition_penalty,
        }
        if p.seed is not None:
            body["seed"] = p.seed
        return body

    def send(self, req: ChatRequest) -> ChatResponse:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        start = time.perf_counter()
        try:
            r = self.client.post(f"{self.base_url}/chat/completions", json=self.payload(req), headers=headers)
        except httpx.TimeoutException as exc:
            raise BackendError(None, f"timeout: {exc}") from exc
        except httpx.HTTPError as exc:
            raise BackendError(None, f"transport error: {exc}") from exc
        latency = int((time.perf_counter() - start) * 1000)
        if r.status_code != 200:
            raise BackendError(r.status_code, r.text)
        try:
            data = r.json()
            text = data["choices"][0]["message"]["content"] or ""
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendError(r.status_code, f"malformed response: {r.text[:200]}") from exc
        usage = {k: int(v) for k, v in (data.get("usage") or {}).items() if isinstance(v, int)}
        return ChatResponse(text, usage, latency, self.backend_id)


class ScriptedBackend:
    """In-process backend answering from a function; used to record fixtures and in tests."""

    def __init__(self, responder: Callable[[ChatRequest], str], backend_id: str = "scripted"):
        self.responder = responder
        self.backend_id = backend_id

    def send(self, req: ChatRequest) -> ChatResponse:
        return ChatResponse(self.responder(req), backend_id=self.backend_id)


@dataclass(frozen=True)
class RetryPolicy:
    attempts: int = 3
    backoff: tuple[float, ...] = (1.0, 4.0)

    def delay(self, attempt: int) -> float:
        """Delay after failed ``attempt`` (0-based), capped at the last entry."""
        return self.backoff[min(attempt, len(self.backoff) - 1)]


def _retryable(exc: BackendError) -> bool:
    return exc.status is None or exc.status in RETRY_STATUSES


class Gateway:
    """Serves requests from the cache, else from the backend (unless replay-only)."""

    def __init__(self, backend: Backend | None = None, cache: ResponseCache | None = None,
                 replay_only: bool = False, retry: RetryPolicy = RetryPolicy(),
                 sleep: Callable[[float], None] = time.sleep):
        if backend is None and not replay_only:
            raise ValueError("a gateway without a backend must be replay-only")
        self.backend = None if replay_only else backend
        self.cache = cache
        self.replay_only = replay_only
        self.retry = retry
        self.sleep = sleep
        self._lock = threading.Lock()
        self.backend_calls = 0
        self.cache_hits = 0

    def complete(self, req: ChatRequest) -> ChatResponse:
        key = req.key
        if self.cache is not None:
            hit = self.cache.get(key)
            if hit is not None:
                with self._lock:
                    self.cache_hits += 1
                return hit
        if self.backend is None:
            raise FixtureMiss(key)
        resp = self._send(req)
        if self.cache is not None:
            self.cache.put(req, resp)
        return resp

    def _send(self, req: ChatRequest) -> ChatResponse:
        last: BackendError | None = None
        for attempt in range(self.retry.attempts):
            with self._lock:
                self.backend_calls += 1
            try:
                return self.backend.send(req)
            except BackendError as exc:
                last = exc
                if not _retryable(exc) or attempt == self.retry.attempts - 1:
                    break
                delay = self.retry.delay(attempt)
                log.warning("backend error %s, retrying in %.0fs", exc.status, delay)
                self.sleep(delay)
        raise last


@dataclass
class ModelClient:
    """A gateway bound to one model and one set of generation parameters."""

    gateway: Gateway
    model_id: str
    params: GenerationParams = field(default_factory=default_params)
    run_tag: str = ""

    def request(self, prompt: str, system: str | None = None) -> ChatRequest:
        return ChatRequest.of(self.model_id, prompt, system, params=self.params, run_tag=self.run_tag)

    def ask(self, prompt: str, system: str | None = None) -> ChatResponse:
        return self.gateway.complete(self.request(prompt, system))


_STRICT_BIT = re.compile(r"^\W*([01])\W*$")
_SCORE_BIT = re.compile(r"(?:score|judg(?:e)?ment|answer|rating|result)\s*(?:is|:|：|=)\s*\**\s*([01])(?!\d)",
                        re.IGNORECASE)


def parse_judgment(raw: str) -> int:
    m = _STRICT_BIT.match(raw or "")
    if m:
        return int(m.group(1))
    scores = _SCORE_BIT.findall(raw or "")
    if scores:
        return int(scores[-1])
    verdict = parse_final_answer(raw or "")
    if verdict is TruthValue.UNKNOWN:
        raise UnparseableJudgment(raw)
    return 1 if verdict is TruthValue.TRUE else 0


def judge_binary(judge: ModelClient, criterion_prompt: str, subject: str) -> int:
    """Ask the judge model for a 0/1 verdict on ``subject`` under ``criterion_prompt``."""
    resp = judge.ask(subject, system=criterion_prompt)
    return parse_judgment(resp.text)

