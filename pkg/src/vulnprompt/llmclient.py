"""Chat-completion client with retry, rate limiting, and verdict parsing.

Two transports sit behind one client: a live one speaking the standard
chat-completions wire shape, and a mock one replaying scripted responses
keyed by a stable hash of the prompt, which makes end-to-end runs
byte-reproducible. The API credential comes from the VULNPROMPT_API_KEY
environment variable and is never written to manifests.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import requests

API_KEY_ENV = "VULNPROMPT_API_KEY"

DETECTION_PERSONA = "I want you to act as a Vulnerability Detection System."


class LlmError(Exception):
    """Base class for client failures."""


class LlmTransportError(LlmError):
    """All attempts failed in transit (connection, timeout, rate limit)."""


class LlmProtocolError(LlmError):
    """The endpoint answered outside the wire contract."""


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    backoff_base: float = 0.5

    def __post_init__(self) -> None:
        if self.max_attempts < 1:
            raise LlmProtocolError("retry policy needs at least one attempt")


@dataclass(frozen=True)
class LlmConfig:
    endpoint: str = "https://api.openai.com/v1"
    model: str = "gpt-3.5-turbo-0125"
    temperature: float = 0.0
    max_output_tokens: int = 512
    timeout: float = 60.0
    max_in_flight: int = 4
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    transport: str = "mock"  # live | mock
    script_path: str | None = None
    requests_per_second: float | None = None

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise LlmProtocolError(f"temperature must be >= 0, got {self.temperature}")
        if self.transport not in ("live", "mock"):
            raise LlmProtocolError(f"unknown transport {self.transport!r}")


@dataclass(frozen=True)
class LlmResponse:
    text: str
    prompt_tokens: int
    completion_tokens: int
    latency: float
    attempts: int


@dataclass(frozen=True)
class Verdict:
    decision: str  # yes | no | unparseable
    explanation: str
    raw: LlmResponse | None = None


def prompt_hash(text: str) -> str:
    """Stable key for scripting mock responses."""
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


# --- transports -----------------------------------------------------------------


class Transport(Protocol):
    def send(self, messages: list[dict], config: "LlmConfig") -> tuple[str, int, int]:
        """Returns (text, prompt_tokens, completion_tokens); raises LlmTransportError
        for retryable failures and LlmProtocolError for contract violations."""
        ...


class RetryableStatus(LlmTransportError):
    """HTTP 429: retry with backoff."""


class LiveTransport:
    def __init__(self, session: requests.Session | None = None) -> None:
        self._session = session or requests.Session()

    def send(self, messages: list[dict], config: LlmConfig) -> tuple[str, int, int]:
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(API_KEY_ENV)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        payload = {
            "model": config.model,
            "messages": messages,
            "temperature": config.temperature,
            "max_tokens": config.max_output_tokens,
        }
        try:
            resp = self._session.post(
                f"{config.endpoint.rstrip('/')}/chat/completions",
                json=payload,
                headers=headers,
                timeout=config.timeout,
            )
        except (requests.ConnectionError, requests.Timeout) as exc:
            raise LlmTransportError(f"chat completion failed: {exc}") from exc
        if resp.status_code == 429:
            raise RetryableStatus("rate limited (429)")
        if resp.status_code != 200:
            raise LlmProtocolError(f"chat completion returned status {resp.status_code}")
        try:
            body = resp.json()
            choice = body["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError) as exc:
            raise LlmProtocolError(f"malformed chat completion body: {exc}") from exc
        usage = body.get("usage", {})
        return (
            choice,
            int(usage.get("prompt_tokens", 0)),
            int(usage.get("completion_tokens", 0)),
        )


class MockTransport:
    """Replays scripted responses keyed by the hash of the last user turn.

    The script file is a JSON list of [prompt-hash, response-text] pairs.
    A default factory may synthesize responses for unscripted prompts.
    """

    def __init__(
        self,
        responses: dict[str, str] | None = None,
        default: Callable[[str], str] | None = None,
    ) -> None:
        self.responses = dict(responses or {})
        self.default = default

    @classmethod
    def from_script(cls, path: str | Path) -> "MockTransport":
        pairs = json.loads(Path(path).read_text(encoding="utf-8"))
        responses: dict[str, str] = {}
        for entry in pairs:
            key, text = entry[0], entry[1]
            if key in responses:
                raise LlmProtocolError(f"mock script repeats prompt hash {key}")
            responses[key] = text
        return cls(responses)

    def send(self, messages: list[dict], config: LlmConfig) -> tuple[str, int, int]:
        prompt = messages[-1]["content"]
        key = prompt_hash(prompt)
        if key in self.responses:
            text = self.responses[key]
        elif self.default is not None:
            text = self.default(prompt)
        else:
            raise LlmProtocolError(f"no scripted response for prompt hash {key[:16]}...")
        return text, len(prompt) // 4, len(text) // 4


# --- client ----------------------------------------------------------------------


class _TokenBucket:
    def __init__(self, rate: float, sleep: Callable[[float], None]) -> None:
        self.rate = rate
        self._allowance = rate
        self._last = time.monotonic()
        self._lock = threading.Lock()
        self._sleep = sleep

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = time.monotonic()
                self._allowance = min(self.rate, self._allowance + (now - self._last) * self.rate)
                self._last = now
                if self._allowance >= 1.0:
                    self._allowance -= 1.0
                    return
                wait = (1.0 - self._allowance) / self.rate
            self._sleep(wait)


class LlmClient:
    """Shareable client; per-request state is local, concurrency is capped."""

    def __init__(
        self,
        config: LlmConfig,
        transport: Transport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.config = config
        if transport is not None:
            self.transport = transport
        elif config.transport == "mock":
            self.transport = (
                MockTransport.from_script(config.script_path)
                if config.script_path
                else MockTransport()
            )
        else:
            self.transport = LiveTransport()
        self._sleep = sleep
        self._gate = threading.BoundedSemaphore(config.max_in_flight)
        self._bucket = (
            _TokenBucket(config.requests_per_second, sleep)
            if config.requests_per_second
            else None
        )

    def _round_trip(self, messages: list[dict]) -> LlmResponse:
        attempts = 0
        start = time.monotonic()
        last_errors: list[str] = []
        while attempts < self.config.retry.max_attempts:
            attempts += 1
            if self._bucket is not None:
                self._bucket.acquire()
            try:
                with self._gate:
                    text, p_tokens, c_tokens = self.transport.send(messages, self.config)
                return LlmResponse(
                    text=text,
                    prompt_tokens=p_tokens,
                    completion_tokens=c_tokens,
                    latency=time.monotonic() - start,
                    attempts=attempts,
                )
            except LlmTransportError as exc:
                last_errors.append(f"attempt {attempts}: {exc}")
                if attempts < self.config.retry.max_attempts:
                    self._sleep(self.config.retry.backoff_base * (2 ** (attempts - 1)))
        raise LlmTransportError(
            f"all {self.config.retry.max_attempts} attempts failed: " + "; ".join(last_errors)
        )

    def detect(self, prompt: str) -> LlmResponse:
        """One chat round trip with the fixed detection persona."""
        messages = [
            {"role": "system", "content": DETECTION_PERSONA},
            {"role": "user", "content": prompt},
        ]
        return self._round_trip(messages)

    def detect_dialogue(self, prompts: Sequence[str]) -> list[LlmResponse]:
        """Multi-turn detection (used by the two-step baseline); each turn
        carries the accumulated conversation."""
        messages = [{"role": "system", "content": DETECTION_PERSONA}]
        responses: list[LlmResponse] = []
        for prompt in prompts:
            messages.append({"role": "user", "content": prompt})
            response = self._round_trip(messages)
            responses.append(response)
            messages.append({"role": "assistant", "content": response.text})
        return responses


# --- verdict parsing ---------------------------------------------------------------

_LEADING_MARKUP_RE = re.compile(r"^[\s*#>`\"'“”\-:.]+")
_YES_NO_RE = re.compile(r"^(yes|no)\b[\s.,:;!\-]*", re.IGNORECASE)

_NEGATIVE_PATTERNS = ("is not vulnerable", "not buggy", "is not buggy", "no vulnerability")
_POSITIVE_PATTERNS = ("is vulnerable", "buggy")


def parse_verdict(response: LlmResponse) -> Verdict:
    """Total parser: yes/no from the leading token, else first-sentence
    affirmation patterns, else unparseable."""
    text = response.text or ""
    stripped = _LEADING_MARKUP_RE.sub("", text)
    match = _YES_NO_RE.match(stripped)
    if match:
        decision = match.group(1).lower()
        explanation = stripped[match.end() :].strip()
        return Verdict(decision=decision, explanation=explanation, raw=response)

    first_sentence = re.split(r"[.!?\n]", stripped, maxsplit=1)[0].lower()
    for pattern in _NEGATIVE_PATTERNS:
        if pattern in first_sentence:
            return Verdict(decision="no", explanation=text.strip(), raw=response)
    for pattern in _POSITIVE_PATTERNS:
        if pattern in first_sentence:
            return Verdict(decision="yes", explanation=text.strip(), raw=response)
    return Verdict(decision="unparseable", explanation=text.strip(), raw=response)


def write_mock_script(pairs: Sequence[tuple[str, str]], path: str | Path) -> None:
    """Persist (prompt-hash, response) pairs in the script file format."""
    Path(path).write_text(
        json.dumps([[k, v] for k, v in pairs], ensure_ascii=False, indent=1),
        encoding="utf-8",
    )
