"""Chat-completion and embedding backends.

Two implementations share one interface: an HTTP backend speaking the
common ``/chat/completions`` + ``/embeddings`` request shapes, and a
scripted backend that replays canned responses and derives embeddings
from a content hash, for fully offline deterministic runs.

Call and token accounting is tracked per backend instance and can be
capped to abort runaway runs.
"""
from __future__ import annotations

import hashlib
import json
import struct
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import (
    AuthError,
    BudgetExceeded,
    DimensionMismatch,
    FixtureExhausted,
    TransportError,
)

DEFAULT_EMBED_DIM = 64
RETRY_ATTEMPTS = 3
RETRY_BASE_DELAY = 1.0


@dataclass
class ChatRequest:
    prompt: str
    temperature: float = 0.0
    max_output_tokens: int = 2048
    model_tag: str = ""

    def __post_init__(self):
        if not self.prompt:
            raise ValueError("prompt must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass
class Usage:
    """Monotone per-run accounting shared by all calls on one backend."""
    calls: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0

    @property
    def total_tokens(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    def as_dict(self) -> dict:
        return {
            "calls": self.calls,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "total_tokens": self.total_tokens,
        }


def _rough_tokens(text: str) -> int:
    # cheap accounting proxy; the qa module owns the calibrated estimator
    return max(1, len(text) // 4)


class Backend:
    """Shared budget/accounting machinery for concrete backends."""

    def __init__(self, max_calls: Optional[int] = None,
                 max_tokens: Optional[int] = None):
        self.usage = Usage()
        self._max_calls = max_calls
        self._max_tokens = max_tokens
        self._lock = threading.Lock()

    def _charge(self, prompt_text: str, completion_text: str) -> None:
        with self._lock:
            self.usage.calls += 1
            self.usage.prompt_tokens += _rough_tokens(prompt_text)
            self.usage.completion_tokens += _rough_tokens(completion_text)

    def _check_budget(self) -> None:
        with self._lock:
            if self._max_calls is not None and self.usage.calls >= self._max_calls:
                raise BudgetExceeded(f"call cap {self._max_calls} reached")
            if self._max_tokens is not None and self.usage.total_tokens >= self._max_tokens:
                raise BudgetExceeded(f"token cap {self._max_tokens} reached")

    def complete(self, request: ChatRequest) -> str:
        raise NotImplementedError

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        raise NotImplementedError


def hash_embedding(text: str, dim: int = DEFAULT_EMBED_DIM) -> np.ndarray:
    """Deterministic unit vector derived from the text content.

    Bytes come from chained SHA-256 digests of ``text || counter``, mapped
    to floats in [-1, 1] and L2-normalized. Stable across platforms and
    library versions; provides geometry, not semantics.
    """
    raw = text.encode("utf-8")
    words = []
    counter = 0
    while len(words) < dim:
        digest = hashlib.sha256(raw + b"\x00" + str(counter).encode()).digest()
        words.extend(struct.unpack(">8I", digest))
        counter += 1
    vec = np.array(words[:dim], dtype=np.float64)
    vec = vec / 2147483648.0 - 1.0
    norm = np.linalg.norm(vec)
    if norm == 0:  # astronomically unlikely, but keep the unit-norm contract
        vec[0] = 1.0
        norm = 1.0
    return (vec / norm).astype(np.float32)


def _embed_batch(texts: Sequence[str], one) -> np.ndarray:
    if not texts:
        raise ValueError("texts must be non-empty")
    if any(not t for t in texts):
        raise ValueError("each text must be non-empty")
    vectors = [one(t) for t in texts]
    dims = {len(v) for v in vectors}
    if len(dims) != 1:
        raise DimensionMismatch(f"inconsistent embedding sizes: {sorted(dims)}")
    return np.stack(vectors)


@dataclass
class FixtureRule:
    """One canned chat response.

    ``contains`` substrings must all appear in the prompt; ``not_contains``
    must all be absent. Non-sticky rules are consumed on first use, giving
    queue semantics among rules with the same matcher.
    """
    response: str
    contains: tuple[str, ...] = ()
    not_contains: tuple[str, ...] = ()
    sticky: bool = False
    used: bool = field(default=False, compare=False)

    def matches(self, prompt: str) -> bool:
        if self.used and not self.sticky:
            return False
        return all(s in prompt for s in self.contains) and not any(
            s in prompt for s in self.not_contains
        )


class ScriptedBackend(Backend):
    """Deterministic stand-in for chat/embedding providers.

    Chat replies come from an ordered rule list (first match wins);
    embeddings are content-hash unit vectors of a fixed dimension.
    """

    def __init__(self, rules: Sequence[FixtureRule] = (),
                 dim: int = DEFAULT_EMBED_DIM,
                 max_calls: Optional[int] = None,
                 max_tokens: Optional[int] = None):
        super().__init__(max_calls=max_calls, max_tokens=max_tokens)
        self.rules = list(rules)
        self.dim = dim
        self.request_log: list[str] = []

    @classmethod
    def from_fixture_file(cls, path, **kwargs) -> "ScriptedBackend":
        """Load rules from a JSONL fixture, one rule object per line."""
        rules = []
        for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TransportError(f"{path}:{line_no}: bad fixture record: {exc}")
            contains = rec.get("contains", [])
            if isinstance(contains, str):
                contains = [contains]
            not_contains = rec.get("not_contains", [])
            if isinstance(not_contains, str):
                not_contains = [not_contains]
            rules.append(FixtureRule(
                response=rec["response"],
                contains=tuple(contains),
                not_contains=tuple(not_contains),
                sticky=bool(rec.get("sticky", False)),
            ))
        return cls(rules=rules, **kwargs)

    def complete(self, request: ChatRequest) -> str:
        self._check_budget()
        with self._lock:
            self.request_log.append(request.prompt)
            for rule in self.rules:
                if rule.matches(request.prompt):
                    rule.used = True
                    reply = rule.response
                    break
            else:
                head = request.prompt[:120].replace("\n", " ")
                raise FixtureExhausted(f"no canned response matches prompt: {head!r}...")
        self._charge(request.prompt, reply)
        return reply

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        vectors = _embed_batch(texts, lambda t: hash_embedding(t, self.dim))
        self._charge(" ".join(texts), "")
        return vectors

    def reset(self) -> None:
        """Restore all rules to unused; accounting is not reset."""
        for rule in self.rules:
            rule.used = False


class HttpBackend(Backend):
    """Backend for OpenAI-compatible chat-completion and embedding endpoints."""

    def __init__(self, api_base: str, api_key: str = "",
                 model_tag: str = "", embedding_model: str = "",
                 max_calls: Optional[int] = None,
                 max_tokens: Optional[int] = None,
                 timeout: float = 120.0):
        super().__init__(max_calls=max_calls, max_tokens=max_tokens)
        self.api_base = api_base.rstrip("/")
        self.api_key = api_key
        self.model_tag = model_tag
        self.embedding_model = embedding_model or model_tag
        self.timeout = timeout

    def _post(self, path: str, payload: dict) -> dict:
        import requests

        url = f"{self.api_base}{path}"
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_error = None
        for attempt in range(RETRY_ATTEMPTS):
            try:
                resp = requests.post(url, json=payload, headers=headers,
                                     timeout=self.timeout)
            except requests.RequestException as exc:
                last_error = exc
                time.sleep(RETRY_BASE_DELAY * 2 ** attempt)
                continue
            if resp.status_code in (401, 403):
                raise AuthError(f"{url}: HTTP {resp.status_code}")
            if resp.status_code >= 500 or resp.status_code == 429:
                last_error = TransportError(f"{url}: HTTP {resp.status_code}")
                time.sleep(RETRY_BASE_DELAY * 2 ** attempt)
                continue
            if resp.status_code != 200:
                raise TransportError(f"{url}: HTTP {resp.status_code}: {resp.text[:200]}")
            return resp.json()
        raise TransportError(f"{url}: giving up after {RETRY_ATTEMPTS} attempts: {last_error}")

    def complete(self, request: ChatRequest) -> str:
        self._check_budget()
        body = self._post("/chat/completions", {
            "model": request.model_tag or self.model_tag,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        })
        try:
            reply = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise TransportError(f"malformed chat response: {str(body)[:200]}")
        self._charge(request.prompt, reply or "")
        return reply or ""

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        if not texts or any(not t for t in texts):
            raise ValueError("texts must be non-empty strings")
        self._check_budget()
        body = self._post("/embeddings", {
            "model": self.embedding_model,
            "input": list(texts),
        })
        try:
            rows = sorted(body["data"], key=lambda d: d["index"])
            vectors = [np.asarray(r["embedding"], dtype=np.float32) for r in rows]
        except (KeyError, TypeError):
            raise TransportError(f"malformed embedding response: {str(body)[:200]}")
        if len(vectors) != len(texts):
            raise DimensionMismatch(
                f"provider returned {len(vectors)} vectors for {len(texts)} texts")
        dims = {len(v) for v in vectors}
        if len(dims) != 1:
            raise DimensionMismatch(f"inconsistent embedding sizes: {sorted(dims)}")
        self._charge(" ".join(texts), "")
        return np.stack(vectors)


@dataclass
class BackendRouter:
    """Per-role backend handles: pipeline calls, senior-model analysis, embeddings.

    Roles default to the pipeline backend when not set separately.
    """
    pipeline: Backend
    senior: Optional[Backend] = None
    embedder: Optional[Backend] = None

    def for_role(self, role: str) -> Backend:
        if role == "senior" and self.senior is not None:
            return self.senior
        if role == "embedding" and self.embedder is not None:
            return self.embedder
        return self.pipeline
