"""Uniform chat-completion client plus a deterministic scripted backend.

One wire dialect (the OpenAI-compatible ``/chat/completions`` shape) serves
every hosted model; model ids are pure configuration. The scripted backend
replays canned replies matched by substring or call order, records every
request verbatim, and can inject transient failures, which makes the whole
system testable offline.
"""

from __future__ import annotations

import base64
import hashlib
import json
import mimetypes
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import requests

from . import errors
from .errors import ProviderError, ScriptExhaustedError, TransportError

ROLES = frozenset({"system", "user", "assistant", "tool"})
FINISH_REASONS = frozenset({"stop", "length", "error"})

DEFAULT_API_KEY_ENV = "TUTOR_API_KEY"


# --- messages -----------------------------------------------------------------

@dataclass(frozen=True)
class Text:
    text: str


@dataclass(frozen=True)
class ImageRef:
    source: str  # local file path or URL


Part = Text | ImageRef


@dataclass(frozen=True)
class ChatMessage:
    role: str
    parts: tuple[Part, ...]

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if not self.parts:
            raise ValueError("message parts must be non-empty")
        if self.role == "tool":
            if len(self.parts) != 1 or not isinstance(self.parts[0], Text):
                raise ValueError("tool messages carry exactly one text part")


def text_message(role: str, text: str) -> ChatMessage:
    return ChatMessage(role=role, parts=(Text(text),))


@dataclass
class GenerationRequest:
    model_id: str
    messages: list[ChatMessage]
    temperature: float = 0.6
    max_tokens: int = 2048
    request_tag: str = ""

    def __post_init__(self):
        if not self.messages:
            raise ValueError("messages must be non-empty")
        if not 0.0 <= self.temperature <= 2.0:
            raise ValueError(f"temperature must be in [0, 2], got {self.temperature}")
        if self.max_tokens < 1:
            raise ValueError(f"max_tokens must be > 0, got {self.max_tokens}")


@dataclass(frozen=True)
class GenerationResult:
    text: str
    finish_reason: str
    latency_s: float
    attempt_count: int


def render_prompt(messages: list[ChatMessage]) -> str:
    """Flatten messages to text for hashing and script matching. Image parts
    appear as ``[image:<source>]`` markers; text is passed through untouched."""
    lines = []
    for msg in messages:
        for part in msg.parts:
            lines.append(part.text if isinstance(part, Text) else f"[image:{part.source}]")
    return "\n".join(lines)


def wire_messages(messages: list[ChatMessage]) -> list[dict]:
    """OpenAI-compatible message payload; local images become data URLs."""
    out = []
    for msg in messages:
        content = []
        for part in msg.parts:
            if isinstance(part, Text):
                content.append({"type": "text", "text": part.text})
            else:
                content.append({"type": "image_url", "image_url": {"url": _image_url(part.source)}})
        out.append({"role": msg.role, "content": content})
    return out


def _image_url(source: str) -> str:
    if source.startswith(("http://", "https://", "data:")):
        return source
    data = Path(source).read_bytes()
    mime = mimetypes.guess_type(source)[0] or "image/png"
    return f"data:{mime};base64,{base64.b64encode(data).decode('ascii')}"


# --- backends -------------------------------------------------------------------

class _TransientFailure(Exception):
    """Internal: this attempt failed but a retry may succeed."""

    def __init__(self, message: str, timed_out: bool = False):
        super().__init__(message)
        self.timed_out = timed_out


@dataclass
class HttpBackendConfig:
    base_url: str
    api_key: str | None = None
    api_key_env: str = DEFAULT_API_KEY_ENV
    timeout_s: float = 120.0
    max_retries: int = 3
    retry_base_s: float = 0.5
    retry_factor: float = 2.0
    max_inflight: int = 4


class HttpBackend:
    def __init__(self, config: HttpBackendConfig):
        self.config = config
        self.max_retries = config.max_retries
        self.retry_base_s = config.retry_base_s
        self.retry_factor = config.retry_factor
        self.max_inflight = config.max_inflight

    def send(self, request: GenerationRequest) -> tuple[str, str]:
        cfg = self.config
        url = cfg.base_url.rstrip("/") + "/chat/completions"
        headers = {"Content-Type": "application/json"}
        key = cfg.api_key or os.environ.get(cfg.api_key_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        payload = {
            "model": request.model_id,
            "messages": wire_messages(request.messages),
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }
        try:
            resp = requests.post(url, json=payload, headers=headers, timeout=cfg.timeout_s)
        except requests.Timeout as exc:
            raise _TransientFailure(f"timeout after {cfg.timeout_s}s", timed_out=True) from exc
        except requests.RequestException as exc:
            raise _TransientFailure(str(exc)) from exc

        if resp.status_code == 429 or resp.status_code >= 500:
            raise _TransientFailure(f"status {resp.status_code}: {resp.text[:200]}")
        if not resp.ok:
            raise ProviderError(resp.status_code, resp.text[:500])
        try:
            choice = resp.json()["choices"][0]
        except (ValueError, KeyError, IndexError) as exc:
            raise _TransientFailure(f"malformed response body: {exc}") from exc
        text = _content_text(choice.get("message", {}).get("content", ""))
        finish = choice.get("finish_reason") or "stop"
        return text, finish if finish in FINISH_REASONS else "stop"


def _content_text(content) -> str:
    if isinstance(content, str):
        return content
    if isinstance(content, list):  # some providers return content parts
        return "".join(p.get("text", "") for p in content if isinstance(p, dict))
    return ""


@dataclass
class ScriptEntry:
    reply: str = ""
    match: str | None = None  # substring over the rendered prompt; None = positional
    fail: bool = False        # simulate one transient failure
    repeat: bool = False      # serve any number of requests


@dataclass
class ScriptedRequest:
    model: str
    prompt: str
    request: GenerationRequest


class ScriptedBackend:
    """Deterministic test double. Entries are consumed in order: the first
    unconsumed entry whose matcher accepts the prompt serves the request;
    a request nothing matches raises ScriptExhaustedError so tests fail
    loudly rather than silently."""

    max_retries = 3
    retry_base_s = 0.0
    retry_factor = 2.0
    max_inflight = 1

    def __init__(self, script: list[ScriptEntry]):
        if not script:
            raise ValueError("script must be non-empty")
        self.script = list(script)
        self._used = [False] * len(script)
        self.requests: list[ScriptedRequest] = []
        self._lock = threading.Lock()

    def send(self, request: GenerationRequest) -> tuple[str, str]:
        prompt = render_prompt(request.messages)
        with self._lock:
            self.requests.append(ScriptedRequest(model=request.model_id, prompt=prompt, request=request))
            for i, entry in enumerate(self.script):
                if self._used[i] and not entry.repeat:
                    continue
                if entry.match is not None and entry.match not in prompt:
                    continue
                self._used[i] = True
                if entry.fail:
                    raise _TransientFailure(f"scripted failure (entry {i})")
                return entry.reply, "stop"
        raise ScriptExhaustedError(f"no script entry matches request {request.request_tag!r}: {prompt[:120]!r}")


def scripted_backend(script: list[ScriptEntry | str | tuple[str, str]]) -> ScriptedBackend:
    """Build a scripted backend from entries, bare reply strings, or
    (substring, reply) pairs."""
    entries = []
    for item in script:
        if isinstance(item, ScriptEntry):
            entries.append(item)
        elif isinstance(item, str):
            entries.append(ScriptEntry(reply=item))
        else:
            matcher, reply = item
            entries.append(ScriptEntry(reply=reply, match=matcher))
    return ScriptedBackend(entries)


# --- gateway --------------------------------------------------------------------

@dataclass(frozen=True)
class CallRecord:
    request_tag: str
    model: str
    prompt_sha256: str
    response_text: str
    latency_ms: int
    attempts: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "request_tag": self.request_tag,
                "model": self.model,
                "prompt_sha256": self.prompt_sha256,
                "response_text": self.response_text,
                "latency_ms": self.latency_ms,
                "attempts": self.attempts,
            },
            ensure_ascii=False,
        )


class Gateway:
    """Retry wrapper around a backend plus the structured call log.

    Message content is never altered: the logged hash is over the exact
    rendered prompt bytes. Retries cover transient failures only (timeouts,
    connection errors, 429/5xx); provider rejections surface immediately.
    """

    def __init__(self, backend, call_log_path: str | Path | None = None):
        self.backend = backend
        self.call_log_path = Path(call_log_path) if call_log_path else None
        self.calls: list[CallRecord] = []
        self._sem = threading.BoundedSemaphore(max(1, getattr(backend, "max_inflight", 4)))
        self._log_lock = threading.Lock()

    def complete(self, request: GenerationRequest) -> GenerationResult:
        max_retries = getattr(self.backend, "max_retries", 3)
        base = getattr(self.backend, "retry_base_s", 0.5)
        factor = getattr(self.backend, "retry_factor", 2.0)

        started = time.perf_counter()
        attempts = 0
        all_timeouts = True
        last_failure: _TransientFailure | None = None
        while attempts <= max_retries:
            if attempts:
                time.sleep(base * factor ** (attempts - 1))
            attempts += 1
            try:
                with self._sem:
                    text, finish = self.backend.send(request)
            except _TransientFailure as failure:
                last_failure = failure
                all_timeouts = all_timeouts and failure.timed_out
                continue
            latency = time.perf_counter() - started
            if not text:
                finish = "error"
            self._log(request, text, latency, attempts)
            return GenerationResult(text=text, finish_reason=finish, latency_s=latency, attempt_count=attempts)

        if all_timeouts and last_failure is not None and last_failure.timed_out:
            raise errors.TimeoutError(f"all {attempts} attempts timed out: {last_failure}")
        raise TransportError(f"backend failed after {attempts} attempts ({max_retries} retries): {last_failure}")

    def _log(self, request: GenerationRequest, text: str, latency_s: float, attempts: int) -> None:
        record = CallRecord(
            request_tag=request.request_tag,
            model=request.model_id,
            prompt_sha256=hashlib.sha256(render_prompt(request.messages).encode("utf-8")).hexdigest(),
            response_text=text,
            latency_ms=int(round(latency_s * 1000)),
            attempts=attempts,
        )
        with self._log_lock:
            self.calls.append(record)
            if self.call_log_path:
                with open(self.call_log_path, "a", encoding="utf-8") as fh:
                    fh.write(record.to_json() + "\n")


def complete(request: GenerationRequest, backend, call_log_path: str | Path | None = None) -> GenerationResult:
    """One-off completion without holding a Gateway."""
    return Gateway(backend, call_log_path=call_log_path).complete(request)
