"""Model clients: an HTTP chat-completion client and three mock models."""

from __future__ import annotations

import json
import os
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from string import ascii_uppercase
from typing import Protocol

from ..assembler import BenchmarkItem, verify_soundness
from ..rng import Stream
from ..skills import RuleTable, SkillTable
from .prompt import render_prompt

API_KEY_ENV = "AFBENCH_API_KEY"


class ClientConfigError(RuntimeError):
    """Configuration or authentication problem; aborts a run before any request."""


class TransientError(RuntimeError):
    pass


class PermanentError(RuntimeError):
    pass


class ModelClient(Protocol):
    model_id: str

    def complete(self, item: BenchmarkItem) -> str: ...


@dataclass
class RetryPolicy:
    attempts: int = 3
    backoff: float = 0.5
    max_backoff: float = 8.0

    def delay(self, attempt: int) -> float:
        return min(self.backoff * (2 ** attempt), self.max_backoff)


class HTTPChatClient:
    """Chat-completion endpoint speaking the common ``/v1/chat/completions`` shape.

    Sends one user message per item with temperature 0. Status 429 and 5xx
    are retried with exponential backoff; 401/403 raise
    :class:`ClientConfigError`; other 4xx are permanent failures.
    """

    def __init__(self, endpoint: str, model: str, *, api_key: str | None = None, timeout: float = 60.0,
                 retry: RetryPolicy | None = None, min_interval: float = 0.0):
        if not endpoint:
            raise ClientConfigError("no endpoint configured")
        if not model:
            raise ClientConfigError("no model name configured")
        self.endpoint = endpoint
        self.model_id = model
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.timeout = timeout
        self.retry = retry or RetryPolicy()
        self.min_interval = min_interval
        self._lock = threading.Lock()
        self._last = 0.0
        self.settings = {"temperature": 0, "max_tokens": 64}

    def _throttle(self):
        if self.min_interval <= 0:
            return
        with self._lock:
            wait = self._last + self.min_interval - time.monotonic()
            if wait > 0:
                time.sleep(wait)
            self._last = time.monotonic()

    def _post(self, payload: dict) -> dict:
        data = json.dumps(payload).encode()
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        req = urllib.request.Request(self.endpoint, data=data, headers=headers, method="POST")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return json.loads(resp.read().decode())
        except urllib.error.HTTPError as exc:
            if exc.code in (401, 403):
                raise ClientConfigError(f"endpoint rejected credentials (HTTP {exc.code})") from None
            if exc.code == 429 or exc.code >= 500:
                raise TransientError(f"HTTP {exc.code}") from None
            raise PermanentError(f"HTTP {exc.code}") from None
        except (urllib.error.URLError, TimeoutError, ConnectionError) as exc:
            raise TransientError(str(exc)) from None
        except json.JSONDecodeError:
            raise PermanentError("endpoint returned invalid JSON") from None

    def complete(self, item: BenchmarkItem) -> str:
        payload = {"model": self.model_id, "messages": [{"role": "user", "content": render_prompt(item)}], **self.settings}
        for attempt in range(self.retry.attempts):
            self._throttle()
            try:
                body = self._post(payload)
                try:
                    return body["choices"][0]["message"]["content"]
                except (KeyError, IndexError, TypeError):
                    raise PermanentError("response has no choices[0].message.content") from None
            except TransientError:
                if attempt + 1 == self.retry.attempts:
                    raise
                time.sleep(self.retry.delay(attempt))
        raise TransientError("retries exhausted")

    def check(self) -> None:
        """Probe the endpoint once; raises :class:`ClientConfigError` on auth or config problems."""
        try:
            self._post({"model": self.model_id, "messages": [{"role": "user", "content": "ping"}], "max_tokens": 1})
        except (TransientError, PermanentError) as exc:
            raise ClientConfigError(f"endpoint check failed: {exc}") from None


class FaithfulOracle:
    """Answers with whatever choice the statements symbolically imply."""

    model_id = "mock-oracle"

    def __init__(self, skills: SkillTable, rules: RuleTable):
        self.skills, self.rules = skills, rules

    def complete(self, item: BenchmarkItem) -> str:
        if not item.statements:
            return f"{ascii_uppercase[item.metadata['default_index']]}"
        res = verify_soundness(item, self.skills, self.rules)
        if res.implied_choice is None:
            return "I cannot tell."
        return f"The answer is {ascii_uppercase[res.implied_choice]}"


class ParametricParrot:
    """Ignores the context and always gives the dataset's default answer."""

    model_id = "mock-parrot"

    def complete(self, item: BenchmarkItem) -> str:
        i = item.metadata["default_index"]
        return f"{ascii_uppercase[i]}: {item.choices[i]}"


class UniformRandom:
    """Picks a letter uniformly, seeded per item."""

    model_id = "mock-random"

    def __init__(self, seed: int = 0):
        self.seed = seed

    def complete(self, item: BenchmarkItem) -> str:
        i = Stream(self.seed, "mock-random", item.id).integers(len(item.choices))
        return ascii_uppercase[i]


def make_mock(name: str, skills: SkillTable, rules: RuleTable, seed: int = 0) -> ModelClient:
    if name == "oracle":
        return FaithfulOracle(skills, rules)
    if name == "parrot":
        return ParametricParrot()
    if name == "random":
        return UniformRandom(seed)
    raise ClientConfigError(f"unknown mock {name!r}; choose oracle, parrot or random")
