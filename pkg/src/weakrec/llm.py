"""LLM backends: an OpenAI-compatible chat-completion client and offline mocks."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import httpx
import numpy as np

from .promptgen import extract_candidates

logger = logging.getLogger(__name__)

API_KEY_ENV = "WEAKREC_API_KEY"


class LlmError(RuntimeError):
    pass


class ConfigurationError(LlmError):
    pass


class AuthError(LlmError):
    pass


class BackendUnavailable(LlmError):
    pass


class BudgetExhausted(LlmError):
    pass


@dataclass(frozen=True)
class Hints:
    """Side information a mock may use; never sent over the wire.

    ``target`` is the held-out item's title, ``rs_order`` the candidate titles
    in recommender order.
    """

    target: str | None = None
    rs_order: tuple[str, ...] | None = None


def format_ranking(titles: Sequence[str]) -> str:
    return "\n".join(f"{k}. {t}" for k, t in enumerate(titles, start=1))


class LlmBackend:
    name = "backend"
    temperature = 0.0
    top_p = 0.1
    max_in_flight = 4
    model = ""

    def complete(self, prompt: str, hints: Hints | None = None) -> str:
        raise NotImplementedError

    def cache_params(self) -> dict:
        return {"temperature": self.temperature, "top_p": self.top_p}


class MockOracle(LlmBackend):
    """Puts the held-out item first, the rest in presentation order."""

    name = "mock-oracle"

    def complete(self, prompt: str, hints: Hints | None = None) -> str:
        titles = extract_candidates(prompt)
        if hints is None or hints.target not in titles:
            raise LlmError("oracle needs the held-out title among the candidates")
        return format_ranking([hints.target] + [t for t in titles if t != hints.target])


class MockIdentity(LlmBackend):
    """No-op re-ranker.

    Echoes the recommender order when it is supplied through ``hints`` and the
    presentation order otherwise.
    """

    name = "mock-identity"

    def complete(self, prompt: str, hints: Hints | None = None) -> str:
        if hints is not None and hints.rs_order is not None:
            return format_ranking(hints.rs_order)
        return format_ranking(extract_candidates(prompt))


class MockRandom(LlmBackend):
    """Seeded random permutation of the candidates, keyed on the prompt text."""

    name = "mock-random"

    def __init__(self, seed: int = 0):
        self.seed = seed

    def complete(self, prompt: str, hints: Hints | None = None) -> str:
        titles = extract_candidates(prompt)
        digest = int.from_bytes(hashlib.sha256(prompt.encode("utf-8")).digest()[:8], "little")
        perm = np.random.default_rng([self.seed, digest]).permutation(len(titles))
        return format_ranking([titles[k] for k in perm])

    def cache_params(self) -> dict:
        return {"seed": self.seed}


class HttpBackend(LlmBackend):
    """Chat-completion client for OpenAI-compatible endpoints.

    The API key is read from the environment at construction, so a missing key
    fails before any request is made.
    """

    name = "http"

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key_env: str = API_KEY_ENV,
        temperature: float = 0.0,
        top_p: float = 0.1,
        max_tokens: int = 512,
        system_prompt: str | None = None,
        attempts: int = 3,
        backoff: float = 1.0,
        timeout: float = 60.0,
        max_in_flight: int = 4,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if not base_url:
            raise ConfigurationError("backend URL is not set")
        if not model:
            raise ConfigurationError("backend model is not set")
        key = os.environ.get(api_key_env)
        if not key:
            raise ConfigurationError(f"environment variable {api_key_env} is not set")
        self.url = base_url.rstrip("/") + "/chat/completions"
        self.model = model
        self.temperature = temperature
        self.top_p = top_p
        self.max_tokens = max_tokens
        self.system_prompt = system_prompt
        self.attempts = attempts
        self.backoff = backoff
        self.max_in_flight = max_in_flight
        self._sleep = sleep
        self._client = httpx.Client(
            timeout=timeout,
            transport=transport,
            headers={"Authorization": f"Bearer {key}", "Content-Type": "application/json"},
        )

    def request_body(self, prompt: str) -> dict:
        messages = []
        if self.system_prompt:
            messages.append({"role": "system", "content": self.system_prompt})
        messages.append({"role": "user", "content": prompt})
        return {
            "model": self.model,
            "messages": messages,
            "temperature": self.temperature,
            "top_p": self.top_p,
            "max_tokens": self.max_tokens,
        }

    def cache_params(self) -> dict:
        return {
            "temperature": self.temperature,
            "top_p": self.top_p,
            "max_tokens": self.max_tokens,
            "system_prompt": self.system_prompt,
        }

    def complete(self, prompt: str, hints: Hints | None = None) -> str:
        body = self.request_body(prompt)
        last = ""
        for attempt in range(self.attempts):
            if attempt:
                self._sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self._client.post(self.url, json=body)
            except httpx.TransportError as exc:
                last = f"transport error: {exc}"
                logger.warning("attempt %d/%d failed: %s", attempt + 1, self.attempts, last)
                continue
            if resp.status_code in (401, 403):
                raise AuthError(f"authentication failed ({resp.status_code})")
            if resp.status_code == 429 or resp.status_code >= 500:
                last = f"HTTP {resp.status_code}"
                logger.warning("attempt %d/%d failed: %s", attempt + 1, self.attempts, last)
                continue
            if resp.status_code >= 400:
                raise LlmError(f"request rejected ({resp.status_code}): {resp.text[:200]}")
            try:
                return resp.json()["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise LlmError(f"malformed completion payload: {exc!r}") from None
        raise BackendUnavailable(f"backend unavailable after {self.attempts} attempts ({last})")

    def close(self) -> None:
        self._client.close()


# ---------------------------------------------------------------------------


@dataclass
class Budget:
    max_requests: int | None = None
    max_total_prompt_chars: int | None = None
    requests: int = 0
    prompt_chars: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def charge(self, prompt: str) -> None:
        """Reserve one request; raises before anything is dispatched if it would overspend."""
        with self._lock:
            if self.max_requests is not None and self.requests + 1 > self.max_requests:
                raise BudgetExhausted(f"request budget of {self.max_requests} exhausted")
            if (
                self.max_total_prompt_chars is not None
                and self.prompt_chars + len(prompt) > self.max_total_prompt_chars
            ):
                raise BudgetExhausted(f"prompt budget of {self.max_total_prompt_chars} chars exhausted")
            self.requests += 1
            self.prompt_chars += len(prompt)


class ResponseCache:
    """Content-addressed JSON files, one per (prompt, model, params)."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    @staticmethod
    def key(prompt: str, model: str, params: dict) -> str:
        blob = json.dumps({"prompt": prompt, "model": model, "params": params}, sort_keys=True)
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def get(self, key: str) -> str | None:
        path = self._path(key)
        with self._lock:
            if not path.exists():
                return None
            return json.loads(path.read_text(encoding="utf-8"))["response"]

    def put(self, key: str, prompt: str, model: str, params: dict, response: str) -> None:
        record = {"key": key, "model": model, "params": params, "prompt": prompt, "response": response}
        with self._lock:
            fd, tmp = tempfile.mkstemp(dir=self.directory, suffix=".tmp")
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(record, fh, sort_keys=True)
            os.replace(tmp, self._path(key))


class ManagedBackend:
    """Cache lookup, then budget check, then dispatch to the wrapped backend."""

    def __init__(self, backend: LlmBackend, cache: ResponseCache | None = None, budget: Budget | None = None):
        self.backend = backend
        self.cache = cache
        self.budget = budget or Budget()
        self.dispatched = 0
        self.cache_hits = 0
        self._lock = threading.Lock()

    @property
    def name(self) -> str:
        return self.backend.name

    @property
    def max_in_flight(self) -> int:
        return self.backend.max_in_flight

    def complete(self, prompt: str, hints: Hints | None = None) -> str:
        key = None
        if self.cache is not None:
            key = ResponseCache.key(prompt, f"{self.backend.name}:{self.backend.model}", self.backend.cache_params())
            hit = self.cache.get(key)
            if hit is not None:
                with self._lock:
                    self.cache_hits += 1
                return hit
        self.budget.charge(prompt)
        with self._lock:
            self.dispatched += 1
        text = self.backend.complete(prompt, hints)
        if self.cache is not None:
            self.cache.put(key, prompt, f"{self.backend.name}:{self.backend.model}", self.backend.cache_params(), text)
        return text


def make_backend(name: str, seed: int = 0, **http) -> LlmBackend:
    if name == "mock-oracle":
        return MockOracle()
    if name == "mock-identity":
        return MockIdentity()
    if name == "mock-random":
        return MockRandom(seed)
    if name == "http":
        return HttpBackend(**http)
    raise ConfigurationError(f"unknown backend {name!r}")
