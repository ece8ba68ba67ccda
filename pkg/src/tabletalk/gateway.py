"""Chat-completion access for teacher and student roles.

Three providers share one calling convention: an OpenAI-compatible HTTP
endpoint, a deterministic scripted provider for offline runs and tests,
and a replay provider built from a previous run's transcript log. Every
exchange (including failed attempts) is appended to the run's
append-only transcript.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import requests

DEFAULT_IN_FLIGHT = 8
API_KEY_VAR = "MODEL_API_KEY"


class TransportError(RuntimeError):
    """Transient or final transport failure talking to a model endpoint."""


class ScriptMiss(LookupError):
    """A scripted provider had no (or no unique) rule for a request."""


@dataclass(frozen=True)
class ChatMessage:
    role: str  # system | user | assistant
    content: str

    def __post_init__(self):
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"bad role {self.role!r}")
        if not self.content:
            raise ValueError("message content must be non-empty")

    def to_json(self) -> dict:
        return {"role": self.role, "content": self.content}


def render_messages(messages) -> str:
    """Flatten messages to the text scripted-provider rules match against."""
    return "\n\n".join(f"[{m.role}] {m.content}" for m in messages)


def request_hash(provider_name: str, messages) -> str:
    payload = json.dumps(
        {"provider": provider_name, "messages": [m.to_json() for m in messages]},
        sort_keys=True,
        ensure_ascii=False,
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ModelEndpoint:
    """An OpenAI-compatible chat-completions endpoint."""

    base_url: str
    model: str
    temperature: float = 0.0
    max_output_tokens: int = 1024
    timeout_s: float = 60.0
    retry_budget: int = 3
    backoff_base_s: float = 0.5

    def __post_init__(self):
        if self.retry_budget < 0:
            raise ValueError("retry budget must be >= 0")


class HttpProvider:
    """Calls a chat-completions endpoint with retry and backoff.

    ``transport`` is injectable for tests: a callable taking
    (url, payload, headers, timeout) and returning the parsed JSON body.
    """

    def __init__(self, endpoint: ModelEndpoint, api_key: str | None = None, transport=None):
        self.endpoint = endpoint
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_VAR)
        self._transport = transport or self._http_transport
        self._sleep = time.sleep

    @property
    def name(self) -> str:
        return self.endpoint.model

    @staticmethod
    def _http_transport(url, payload, headers, timeout):
        response = requests.post(url, json=payload, headers=headers, timeout=timeout)
        if response.status_code == 429 or response.status_code >= 500:
            raise TransportError(f"HTTP {response.status_code}: {response.text[:200]}")
        response.raise_for_status()
        return response.json()

    def complete(self, messages, attempt_log=None) -> str:
        url = self.endpoint.base_url.rstrip("/") + "/chat/completions"
        payload = {
            "model": self.endpoint.model,
            "messages": [m.to_json() for m in messages],
            "temperature": self.endpoint.temperature,
            "max_tokens": self.endpoint.max_output_tokens,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_error = None
        for attempt in range(self.endpoint.retry_budget + 1):
            try:
                body = self._transport(url, payload, headers, self.endpoint.timeout_s)
                text = body["choices"][0]["message"]["content"]
                if attempt_log is not None:
                    attempt_log(attempt + 1, text, None)
                return text
            except (TransportError, requests.RequestException, KeyError, ValueError) as exc:
                last_error = exc
                if attempt_log is not None:
                    attempt_log(attempt + 1, None, str(exc))
                if attempt < self.endpoint.retry_budget:
                    self._sleep(self.endpoint.backoff_base_s * (2 ** attempt))
        raise TransportError(
            f"{self.endpoint.model}: exhausted {self.endpoint.retry_budget} retries: {last_error}"
        )


@dataclass(frozen=True)
class ScriptRule:
    """One scripted-response rule matched against the rendered prompt."""

    response: str
    contains: tuple[str, ...] = ()
    not_contains: tuple[str, ...] = ()
    regex: str | None = None

    def matches(self, prompt_text: str) -> bool:
        if any(needle not in prompt_text for needle in self.contains):
            return False
        if any(needle in prompt_text for needle in self.not_contains):
            return False
        if self.regex is not None and re.search(self.regex, prompt_text) is None:
            return False
        return True

    @classmethod
    def from_json(cls, data: dict) -> "ScriptRule":
        return cls(
            response=data["response"],
            contains=tuple(data.get("contains", [])),
            not_contains=tuple(data.get("not_contains", [])),
            regex=data.get("regex"),
        )


class ScriptedProvider:
    """Deterministic canned-response provider for offline runs.

    Rules are ordered; outside strict mode the first match wins. In
    strict mode exactly one rule must match. A request no rule matches
    raises ScriptMiss either way: fabricating output would silently
    poison downstream artifacts.
    """

    def __init__(self, rules, strict: bool = False, name: str = "scripted"):
        self.rules = [r if isinstance(r, ScriptRule) else ScriptRule.from_json(r) for r in rules]
        self.strict = strict
        self.name = name

    @classmethod
    def from_file(cls, path, role: str | None = None, strict: bool = False) -> "ScriptedProvider":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        rules = data[role] if role is not None else data
        name = f"scripted:{role}" if role else "scripted"
        return cls(rules, strict=strict, name=name)

    def complete(self, messages, attempt_log=None) -> str:
        prompt_text = render_messages(messages)
        matches = [rule for rule in self.rules if rule.matches(prompt_text)]
        if self.strict and len(matches) > 1:
            raise ScriptMiss(
                f"{self.name}: {len(matches)} rules match; strict mode requires exactly one"
            )
        if not matches:
            tail = prompt_text[-400:]
            raise ScriptMiss(f"{self.name}: no rule matches request ending with: ...{tail!r}")
        response = matches[0].response
        if attempt_log is not None:
            attempt_log(1, response, None)
        return response


class ReplayProvider:
    """Serves responses recorded in a transcript log, keyed by request hash.

    ``name`` must be the provider name the transcript rows were logged
    under; the request hash covers it.
    """

    def __init__(self, transcript_path, name: str):
        self.name = name
        self._responses: dict[str, str] = {}
        with Path(transcript_path).open(encoding="utf-8") as handle:
            for line in handle:
                if not line.strip():
                    continue
                row = json.loads(line)
                if row.get("response") is not None:
                    self._responses[row["request_hash"]] = row["response"]

    def complete(self, messages, attempt_log=None) -> str:
        key = request_hash(self.name, messages)
        if key not in self._responses:
            raise ScriptMiss(f"replay: no logged response for request {key[:12]}")
        response = self._responses[key]
        if attempt_log is not None:
            attempt_log(1, response, None)
        return response


class TranscriptLog:
    """Append-only JSONL exchange log with a running content hash."""

    def __init__(self, path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._hash = hashlib.sha256()

    def append(self, row: dict) -> None:
        line = json.dumps(row, sort_keys=True, ensure_ascii=False)
        with self._lock:
            with self.path.open("a", encoding="utf-8") as handle:
                handle.write(line + "\n")
            self._hash.update(line.encode("utf-8") + b"\n")

    @property
    def content_hash(self) -> str:
        with self._lock:
            return self._hash.hexdigest()


class Gateway:
    """A provider plus the run-level transcript and in-flight cap."""

    def __init__(self, provider, transcript: TranscriptLog | None = None, limiter=None):
        self.provider = provider
        self.transcript = transcript
        self._limiter = limiter if limiter is not None else threading.Semaphore(DEFAULT_IN_FLIGHT)

    @property
    def name(self) -> str:
        return self.provider.name

    def complete_chat(self, messages) -> str:
        """Run one chat completion, logging every attempt."""
        messages = list(messages)
        if not messages:
            raise ValueError("messages must be non-empty")
        key = request_hash(self.provider.name, messages)

        def attempt_log(attempt, response, error):
            if self.transcript is None:
                return
            self.transcript.append(
                {
                    "request_hash": key,
                    "provider": self.provider.name,
                    "messages": [m.to_json() for m in messages],
                    "response": response,
                    "error": error,
                    "attempt": attempt,
                    "timestamp": datetime.now(timezone.utc).isoformat(),
                }
            )

        with self._limiter:
            return self.provider.complete(messages, attempt_log=attempt_log)


def shared_limiter(max_in_flight: int = DEFAULT_IN_FLIGHT):
    return threading.BoundedSemaphore(max_in_flight)
