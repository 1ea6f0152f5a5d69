"""Chat-completion backends: OpenAI-compatible HTTP, scripted replay, and record."""

from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Protocol, Sequence

import httpx

from .errors import (
    BackendTimeout,
    ParseError,
    ScriptExhausted,
    ScriptMismatch,
    TransportError,
    ValidationError,
)

log = logging.getLogger(__name__)

API_KEY_ENV = "MDT_API_KEY"
ROLES = ("system", "user", "assistant", "tool")


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValidationError(f"unknown chat role {self.role!r}")
        if self.role in ("system", "user") and not self.content:
            raise ValidationError(f"{self.role} message must have content")

    def to_dict(self) -> dict[str, str]:
        return {"role": self.role, "content": self.content}


def system(content: str) -> ChatMessage:
    return ChatMessage("system", content)


def user(content: str) -> ChatMessage:
    return ChatMessage("user", content)


def assistant(content: str) -> ChatMessage:
    return ChatMessage("assistant", content)


@dataclass
class BackendConfig:
    kind: str = "replay"
    model_name: str = "llama-3.1-70b-instruct"
    endpoint_url: str | None = None
    temperature: float = 0.0
    seed: int = 42
    timeout: float = 120.0
    retry: bool = False
    script_path: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("http", "replay", "record"):
            raise ValidationError(f"unknown backend kind {self.kind!r}")
        if self.temperature < 0:
            raise ValidationError("temperature must be >= 0")
        needs_url = self.kind in ("http", "record")
        if needs_url and not self.endpoint_url:
            raise ValidationError(f"{self.kind} backend requires endpoint_url")
        if self.kind == "replay" and self.endpoint_url:
            raise ValidationError("replay backend takes no endpoint_url")
        if self.kind in ("replay", "record") and not self.script_path:
            raise ValidationError(f"{self.kind} backend requires script_path")


class ChatBackend(Protocol):
    def complete(self, agent_id: str, messages: Sequence[ChatMessage]) -> str: ...


def _check_messages(messages: Sequence[ChatMessage]) -> None:
    if not messages:
        raise ValidationError("messages must be non-empty")
    if messages[0].role != "system":
        raise ValidationError("first message must have role=system")


class HttpBackend:
    """Client for an OpenAI-compatible ``/v1/chat/completions`` endpoint."""

    def __init__(self, config: BackendConfig, client: httpx.Client | None = None):
        if not config.endpoint_url:
            raise ValidationError("http backend requires endpoint_url")
        self.config = config
        self.url = config.endpoint_url.rstrip("/") + "/v1/chat/completions"
        self._client = client or httpx.Client(timeout=config.timeout)

    def request_body(self, messages: Sequence[ChatMessage]) -> dict[str, Any]:
        return {
            "model": self.config.model_name,
            "messages": [m.to_dict() for m in messages],
            "temperature": self.config.temperature,
            "seed": self.config.seed,
        }

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(API_KEY_ENV)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _post_once(self, body: dict[str, Any]) -> str:
        try:
            resp = self._client.post(self.url, json=body, headers=self._headers())
        except httpx.TimeoutException as exc:
            raise BackendTimeout(f"timeout calling {self.url}") from exc
        except httpx.HTTPError as exc:
            raise TransportError(f"transport failure calling {self.url}: {exc}") from exc
        if resp.status_code >= 400:
            raise TransportError(f"HTTP {resp.status_code} from {self.url}: {resp.text[:200]}")
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed completion payload from {self.url}") from exc
        if not isinstance(content, str):
            raise TransportError("completion content is not a string")
        return content

    def complete(self, agent_id: str, messages: Sequence[ChatMessage]) -> str:
        _check_messages(messages)
        body = self.request_body(messages)
        try:
            return self._post_once(body)
        except (TransportError, BackendTimeout) as exc:
            if not self.config.retry:
                raise
            log.warning("retrying %s after: %s", agent_id, exc)
            return self._post_once(body)


@dataclass(frozen=True)
class ScriptEntry:
    agent_id: str
    response: str
    match_key: str = ""

    def to_dict(self) -> dict[str, str]:
        return {"agent_id": self.agent_id, "match_key": self.match_key, "response": self.response}


@dataclass
class ReplayScript:
    entries: list[ScriptEntry] = field(default_factory=list)

    def add(self, agent_id: str, response: str, match_key: str = "") -> "ReplayScript":
        self.entries.append(ScriptEntry(agent_id, response, match_key))
        return self

    @classmethod
    def load(cls, path: str | Path) -> "ReplayScript":
        entries = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    d = json.loads(line)
                    entries.append(
                        ScriptEntry(str(d["agent_id"]), str(d["response"]), str(d.get("match_key", "")))
                    )
                except (ValueError, KeyError, TypeError) as exc:
                    raise ParseError(f"{path}:{lineno}: bad script entry ({exc})") from exc
        return cls(entries)

    def dump(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for e in self.entries:
                fh.write(json.dumps(e.to_dict(), ensure_ascii=False) + "\n")


class ReplayBackend:
    """Returns scripted responses in order, one cursor per agent id."""

    def __init__(self, script: ReplayScript):
        self._queues: dict[str, list[ScriptEntry]] = {}
        for e in script.entries:
            self._queues.setdefault(e.agent_id, []).append(e)
        self._cursor: dict[str, int] = {}
        self._lock = threading.Lock()

    def complete(self, agent_id: str, messages: Sequence[ChatMessage]) -> str:
        _check_messages(messages)
        with self._lock:
            queue = self._queues.get(agent_id, [])
            i = self._cursor.get(agent_id, 0)
            if i >= len(queue):
                raise ScriptExhausted(f"replay script has no entry #{i + 1} for agent {agent_id!r}")
            self._cursor[agent_id] = i + 1
        entry = queue[i]
        if entry.match_key and entry.match_key not in messages[-1].content:
            raise ScriptMismatch(
                f"agent {agent_id!r} entry #{i + 1}: match key {entry.match_key!r} not in prompt"
            )
        return entry.response

    def remaining(self) -> dict[str, int]:
        with self._lock:
            return {a: len(q) - self._cursor.get(a, 0) for a, q in self._queues.items()}


class RecordingBackend:
    """Proxies another backend and appends every response to a script file."""

    def __init__(self, inner: ChatBackend, script_path: str | Path):
        self.inner = inner
        self.script_path = Path(script_path)
        self._lock = threading.Lock()

    def complete(self, agent_id: str, messages: Sequence[ChatMessage]) -> str:
        response = self.inner.complete(agent_id, messages)
        line = json.dumps(ScriptEntry(agent_id, response).to_dict(), ensure_ascii=False)
        with self._lock, open(self.script_path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")
        return response


def make_backend(config: BackendConfig, client: httpx.Client | None = None) -> ChatBackend:
    if config.kind == "replay":
        return ReplayBackend(ReplayScript.load(config.script_path))
    http = HttpBackend(config, client=client)
    if config.kind == "record":
        return RecordingBackend(http, config.script_path)
    return http


def complete(backend: ChatBackend, agent_id: str, messages: Sequence[ChatMessage]) -> str:
    return backend.complete(agent_id, messages)
