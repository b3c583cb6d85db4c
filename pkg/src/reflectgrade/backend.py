"""Chat-completion backends: remote HTTP endpoint or deterministic script.

Every agent call in the pipeline goes through `ChatBackend.complete`, which
returns the completion text plus a per-call usage record (token counts and
latency). The HTTP backend speaks the common chat-completions JSON shape and
retries transient failures with exponential backoff; the scripted backend
replays canned responses keyed by (role name, script key) and is the
reference transport for tests and dry runs.
"""

from __future__ import annotations

import json
import os
import random
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Protocol

import requests

from .errors import BackendError, ScriptError

DEFAULT_TEMPERATURE = 0.3
DEFAULT_MAX_OUTPUT_TOKENS = 1024
BACKOFF_BASE_SECONDS = 1.0
BACKOFF_JITTER = 0.2
TRANSIENT_STATUS = frozenset({429, 500, 502, 503, 504})


@dataclass(frozen=True)
class UsageRecord:
    """Token and latency accounting for one or more backend calls."""

    input_tokens: int = 0
    output_tokens: int = 0
    latency: float = 0.0

    def __post_init__(self):
        if self.input_tokens < 0 or self.output_tokens < 0:
            raise BackendError("token counts must be non-negative")
        if not (self.latency >= 0.0 and self.latency == self.latency):
            raise BackendError("latency must be finite and non-negative")

    @property
    def total_tokens(self) -> int:
        return self.input_tokens + self.output_tokens

    def __add__(self, other: "UsageRecord") -> "UsageRecord":
        return UsageRecord(
            input_tokens=self.input_tokens + other.input_tokens,
            output_tokens=self.output_tokens + other.output_tokens,
            latency=self.latency + other.latency,
        )


ZERO_USAGE = UsageRecord()


def accumulate_usage(records: Iterable[UsageRecord]) -> UsageRecord:
    """Componentwise sum of usage records; empty input gives the zero record."""
    total = ZERO_USAGE
    for record in records:
        total = total + record
    return total


@dataclass(frozen=True)
class ChatRequest:
    """One agent call: role identity, prompts, and sampling settings.

    `script_key` addresses the scripted backend's response table (keys are
    "role_name/script_key"); the HTTP backend ignores it.
    """

    role_name: str
    system_prompt: str
    user_prompt: str
    temperature: float = DEFAULT_TEMPERATURE
    max_output_tokens: int = DEFAULT_MAX_OUTPUT_TOKENS
    script_key: str | None = None

    def __post_init__(self):
        if not self.system_prompt or not self.user_prompt:
            raise BackendError("prompts must be non-empty")
        if not 0.0 <= self.temperature <= 2.0:
            raise BackendError(f"temperature {self.temperature} outside [0, 2]")
        if self.max_output_tokens < 1:
            raise BackendError("max_output_tokens must be positive")


@dataclass(frozen=True)
class ChatResponse:
    """Completion text plus usage; text may be empty only for explicit refusals."""

    text: str
    usage: UsageRecord
    refused: bool = False

    def __post_init__(self):
        if not self.text and not self.refused:
            raise BackendError("empty completion without a refusal flag")


@dataclass(frozen=True)
class BackendConfig:
    kind: str  # "http" | "scripted"
    base_url: str | None = None
    model_name: str | None = None
    api_key_env: str = "REFLECTGRADE_API_KEY"
    timeout: float = 60.0
    max_retries: int = 3
    script_path: str | None = None

    def __post_init__(self):
        if self.kind not in ("http", "scripted"):
            raise BackendError(f"unknown backend kind {self.kind!r}")
        if self.kind == "http" and not (self.base_url and self.model_name):
            raise BackendError("http backend requires base_url and model_name")
        if self.kind == "scripted" and not self.script_path:
            raise BackendError("scripted backend requires script_path")
        if self.max_retries < 0:
            raise BackendError("max_retries must be non-negative")


class ChatBackend(Protocol):
    def complete(self, req: ChatRequest) -> ChatResponse: ...


class ScriptedBackend:
    """Replays canned responses from a script table.

    The table maps "role_name/key" to either a single entry or a list of
    entries; list entries are consumed one per call (the last one repeats),
    which lets tests script repair and revision sequences. Single-entry keys
    behave as pure functions: every call returns identical bytes. Latency is
    always reported as 0.0.
    """

    def __init__(self, script: dict):
        self._script = dict(script)
        self._calls: dict[str, int] = {}
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedBackend":
        path = Path(path)
        if not path.exists():
            raise BackendError(f"script file not found: {path}")
        try:
            return cls(json.loads(path.read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise BackendError(f"script file {path} is not valid JSON: {exc}") from exc

    def call_count(self, role_name: str, script_key: str) -> int:
        """Calls made so far for one (role, key); only sequences are counted."""
        with self._lock:
            return self._calls.get(f"{role_name}/{script_key}", 0)

    def complete(self, req: ChatRequest) -> ChatResponse:
        key = f"{req.role_name}/{req.script_key or ''}"
        entry = self._script.get(key)
        if entry is None:
            raise ScriptError(f"no script entry for {key}")
        if isinstance(entry, list):
            if not entry:
                raise ScriptError(f"empty script sequence for {key}")
            with self._lock:
                index = self._calls.get(key, 0)
                self._calls[key] = index + 1
            entry = entry[min(index, len(entry) - 1)]
        return ChatResponse(
            text=entry.get("text", ""),
            usage=UsageRecord(
                input_tokens=int(entry.get("input_tokens", 0)),
                output_tokens=int(entry.get("output_tokens", 0)),
                latency=0.0,
            ),
            refused=bool(entry.get("refused", False)),
        )


class HttpBackend:
    """Remote chat-completions endpoint with bounded retry.

    Transient failures (HTTP 429/5xx, timeouts, connection errors) are retried
    up to `max_retries` times with exponential backoff starting at 1 s,
    doubling, with +/-20% jitter. The reported latency is the wall time of the
    successful attempt only; backoff waits are not billed to the response.
    """

    def __init__(
        self,
        config: BackendConfig,
        session: requests.Session | None = None,
        sleeper: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ):
        if config.kind != "http":
            raise BackendError("HttpBackend requires an http BackendConfig")
        self._config = config
        self._session = session or requests.Session()
        self._sleeper = sleeper
        self._rng = rng or random.Random()

    def _api_key(self) -> str:
        key = os.environ.get(self._config.api_key_env, "")
        if not key:
            raise BackendError(
                f"authentication: environment variable {self._config.api_key_env} "
                "is not set"
            )
        return key

    def complete(self, req: ChatRequest) -> ChatResponse:
        url = self._config.base_url.rstrip("/") + "/chat/completions"
        headers = {
            "Authorization": f"Bearer {self._api_key()}",
            "Content-Type": "application/json",
        }
        payload = {
            "model": self._config.model_name,
            "messages": [
                {"role": "system", "content": req.system_prompt},
                {"role": "user", "content": req.user_prompt},
            ],
            "temperature": req.temperature,
            "max_tokens": req.max_output_tokens,
        }
        attempts = self._config.max_retries + 1
        last_error: str = ""
        for attempt in range(attempts):
            if attempt:
                delay = BACKOFF_BASE_SECONDS * (2 ** (attempt - 1))
                delay *= 1.0 + self._rng.uniform(-BACKOFF_JITTER, BACKOFF_JITTER)
                self._sleeper(delay)
            started = time.monotonic()
            try:
                response = self._session.post(
                    url, headers=headers, json=payload, timeout=self._config.timeout
                )
            except requests.Timeout:
                last_error = "timeout"
                continue
            except requests.ConnectionError as exc:
                last_error = f"connection error: {exc}"
                continue
            elapsed = time.monotonic() - started
            if response.status_code in TRANSIENT_STATUS:
                last_error = f"transient HTTP {response.status_code}"
                continue
            if response.status_code in (401, 403):
                raise BackendError(f"authentication failed (HTTP {response.status_code})")
            if response.status_code != 200:
                raise BackendError(
                    f"HTTP {response.status_code}: {response.text[:200]}"
                )
            try:
                body = response.json()
            except ValueError as exc:
                raise BackendError(f"malformed completion response: {exc}") from exc
            return self._parse_response(body, elapsed)
        raise BackendError(
            f"{last_error} after {self._config.max_retries} retries"
            if self._config.max_retries
            else last_error
        )

    @staticmethod
    def _parse_response(body: dict, elapsed: float) -> ChatResponse:
        try:
            message = body["choices"][0]["message"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"malformed completion response: {exc}") from exc
        usage = body.get("usage", {})
        refusal = message.get("refusal")
        return ChatResponse(
            text=message.get("content") or "",
            usage=UsageRecord(
                input_tokens=int(usage.get("prompt_tokens", 0)),
                output_tokens=int(usage.get("completion_tokens", 0)),
                latency=elapsed,
            ),
            refused=bool(refusal),
        )


def make_backend(config: BackendConfig) -> ChatBackend:
    """Construct the backend described by a config."""
    if config.kind == "scripted":
        return ScriptedBackend.from_file(config.script_path)
    return HttpBackend(config)
