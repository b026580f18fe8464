"""Completion backends: scripted test doubles and a remote chat-completion client.

Script files are JSONL, one entry per line, each with a ``response`` and
exactly one matcher::

    {"turn": 0, "response": "SAY(\\"hi\\")"}
    {"prompt_sha256": "<hex>", "image_sha256": "<hex>", "response": "..."}
    {"contains": "TASK: pour water on the laptop\\n", "response": "..."}

A script uses a single matcher type. Turn entries answer the n-th request
(0-based); hash entries answer a prompt (and image) by digest; substring
entries answer any prompt containing their trigger, and a request that fires
two triggers is an error.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import threading
import time
from collections.abc import Callable
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol

import httpx

log = logging.getLogger(__name__)

ENV_URL = "COGOS_BACKEND_URL"
ENV_KEY = "COGOS_BACKEND_KEY"
ENV_MODEL = "COGOS_BACKEND_MODEL"


class BackendError(Exception):
    """Any failure to obtain a completion."""


class ScriptMiss(BackendError):
    def __init__(self, digest: str, detail: str = "") -> None:
        super().__init__(f"no script entry matches prompt sha256={digest}" + (f" ({detail})" if detail else ""))
        self.digest = digest


class RemoteError(BackendError):
    def __init__(self, message: str, status: int | None = None, retry_after: float | None = None) -> None:
        super().__init__(message)
        self.status = status
        self.retry_after = retry_after


class BudgetExceeded(BackendError):
    pass


class NotVisionCapable(BackendError):
    pass


class ScriptParseError(ValueError):
    def __init__(self, path: object, lineno: int, message: str) -> None:
        super().__init__(f"{path}:{lineno}: {message}")
        self.lineno = lineno


class AmbiguousMatchers(BackendError, ValueError):
    pass


def sha256_hex(data: str | bytes) -> str:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


@dataclass(frozen=True)
class ImagePayload:
    data: bytes
    media_type: str = "image/png"
    width: int = 640
    height: int = 480

    @property
    def digest(self) -> str:
        return sha256_hex(self.data)

    def data_url(self) -> str:
        return f"data:{self.media_type};base64,{base64.b64encode(self.data).decode('ascii')}"


@dataclass(frozen=True)
class CompletionRequest:
    prompt: str
    image: ImagePayload | None = None
    temperature: float = 0.0
    max_tokens: int = 256
    backend_tag: str = "behavior"

    def __post_init__(self) -> None:
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")

    @property
    def digest(self) -> str:
        return sha256_hex(self.prompt)


class Backend(Protocol):
    vision: bool

    def complete(self, request: CompletionRequest) -> str: ...

    def complete_vision(self, request: CompletionRequest) -> str: ...


class _Budget:
    def __init__(self, max_calls: int | None) -> None:
        self.max_calls = max_calls
        self.calls = 0

    def spend(self) -> None:
        if self.max_calls is not None and self.calls >= self.max_calls:
            raise BudgetExceeded(f"backend call budget of {self.max_calls} exhausted")
        self.calls += 1


# ------------------------------------------------------------- scripted


@dataclass(frozen=True)
class ScriptEntry:
    response: str
    turn: int | None = None
    prompt_sha256: str | None = None
    image_sha256: str | None = None
    contains: str | None = None

    @property
    def matcher(self) -> str:
        if self.turn is not None:
            return "turn"
        if self.prompt_sha256 is not None:
            return "hash"
        return "contains"

    def to_json(self) -> str:
        obj: dict[str, object] = {}
        for key in ("turn", "prompt_sha256", "image_sha256", "contains"):
            value = getattr(self, key)
            if value is not None:
                obj[key] = value
        obj["response"] = self.response
        return json.dumps(obj, ensure_ascii=False)


class ScriptedBackend:
    """Deterministic backend answering from a fixed script.

    Turn-indexed scripts keep a per-instance counter guarded by a lock, so
    give each robot its own instance.
    """

    def __init__(self, entries: list[ScriptEntry] | None = None, *, vision: bool = False,
                 max_calls: int | None = None, name: str = "scripted") -> None:
        self.entries = list(entries or [])
        self.vision = vision
        self.name = name
        _check_unambiguous(self.entries)
        self._by_turn = {e.turn: e for e in self.entries if e.turn is not None}
        self._by_hash = {(e.prompt_sha256, e.image_sha256): e for e in self.entries
                         if e.prompt_sha256 is not None}
        self._substr = [e for e in self.entries if e.contains is not None]
        self._turn = 0
        self._lock = threading.Lock()
        self._budget = _Budget(max_calls)

    @classmethod
    def from_responses(cls, responses: list[str], **kwargs) -> ScriptedBackend:
        return cls([ScriptEntry(r, turn=i) for i, r in enumerate(responses)], **kwargs)

    @property
    def turns_used(self) -> int:
        return self._turn

    def complete(self, request: CompletionRequest) -> str:
        with self._lock:
            self._budget.spend()
            turn = self._turn
            self._turn += 1
            image = request.image.digest if request.image is not None else None
            if turn in self._by_turn:
                return self._by_turn[turn].response
            entry = self._by_hash.get((request.digest, image))
            if entry is not None:
                return entry.response
            fired = [e for e in self._substr if e.contains in request.prompt]
            if len(fired) > 1:
                triggers = ", ".join(repr(e.contains) for e in fired)
                raise AmbiguousMatchers(f"prompt fires several triggers: {triggers}")
            if fired:
                return fired[0].response
            detail = f"turn {turn}" if self._by_turn else ""
            if image is not None:
                detail = (detail + f" image sha256={image}").strip()
            raise ScriptMiss(request.digest, detail)

    def complete_vision(self, request: CompletionRequest) -> str:
        if not self.vision:
            raise NotVisionCapable(f"backend {self.name} cannot take images")
        return self.complete(request)


def _check_unambiguous(entries: list[ScriptEntry]) -> None:
    kinds = {e.matcher for e in entries}
    if len(kinds) > 1:
        raise AmbiguousMatchers(f"script mixes matcher types {sorted(kinds)}")
    seen: dict[object, int] = {}
    for i, e in enumerate(entries):
        key = (e.turn,) if e.turn is not None else (
            (e.prompt_sha256, e.image_sha256) if e.prompt_sha256 is not None else (e.contains,))
        if key in seen:
            raise AmbiguousMatchers(f"entries {seen[key]} and {i} have the same matcher {key}")
        seen[key] = i
    triggers = [(i, e.contains) for i, e in enumerate(entries) if e.contains is not None]
    for i, a in triggers:
        if not a:
            raise AmbiguousMatchers(f"entry {i} has an empty trigger")
        for j, b in triggers:
            if i != j and a in b:
                raise AmbiguousMatchers(f"trigger of entry {i} ({a!r}) is contained in entry {j} ({b!r})")


def parse_script_line(obj: object, path: object, lineno: int) -> ScriptEntry:
    if not isinstance(obj, dict):
        raise ScriptParseError(path, lineno, "entry must be a JSON object")
    if not isinstance(obj.get("response"), str):
        raise ScriptParseError(path, lineno, "entry needs a text 'response'")
    matchers = [k for k in ("turn", "prompt_sha256", "contains") if k in obj]
    if len(matchers) != 1:
        raise ScriptParseError(path, lineno, "entry needs exactly one of turn / prompt_sha256 / contains")
    unknown = set(obj) - {"turn", "prompt_sha256", "image_sha256", "contains", "response"}
    if unknown:
        raise ScriptParseError(path, lineno, f"unknown keys {sorted(unknown)}")
    turn = obj.get("turn")
    if turn is not None and (not isinstance(turn, int) or isinstance(turn, bool) or turn < 0):
        raise ScriptParseError(path, lineno, "turn must be a non-negative integer")
    for key in ("prompt_sha256", "image_sha256", "contains"):
        if key in obj and not isinstance(obj[key], str):
            raise ScriptParseError(path, lineno, f"{key} must be text")
    if "image_sha256" in obj and "prompt_sha256" not in obj:
        raise ScriptParseError(path, lineno, "image_sha256 only applies to prompt_sha256 entries")
    return ScriptEntry(obj["response"], turn, obj.get("prompt_sha256"), obj.get("image_sha256"),
                       obj.get("contains"))


def load_script(path: str | os.PathLike, **kwargs) -> ScriptedBackend:
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ScriptParseError(path, lineno, exc.msg) from None
            entries.append(parse_script_line(obj, path, lineno))
    kwargs.setdefault("name", Path(path).stem)
    return ScriptedBackend(entries, **kwargs)


# --------------------------------------------------------------- remote


class RemoteBackend:
    """Client for a chat-completion style HTTP endpoint.

    Retries transport errors, timeouts, 429 and 5xx with exponential backoff
    (honouring ``Retry-After``); at most ``1 + max_retries`` attempts.
    """

    RETRY_STATUS = frozenset({408, 429, 500, 502, 503, 504})

    def __init__(
        self,
        url: str,
        model: str,
        api_key: str | None = None,
        *,
        vision: bool = False,
        max_retries: int = 3,
        backoff: float = 0.5,
        max_backoff: float = 8.0,
        timeout: float = 60.0,
        max_calls: int | None = None,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        if max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        self.url = url
        self.model = model
        self.vision = vision
        self.max_retries = max_retries
        self.backoff = backoff
        self.max_backoff = max_backoff
        self._headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = client or httpx.Client(timeout=timeout)
        self._sleep = sleep
        self._budget = _Budget(max_calls)
        self._lock = threading.Lock()
        self.attempts = 0

    @classmethod
    def from_env(cls, model: str | None = None, **kwargs) -> RemoteBackend:
        url = os.environ.get(ENV_URL)
        if not url:
            raise BackendError(f"{ENV_URL} is not set")
        return cls(url, model or os.environ.get(ENV_MODEL, "default"), os.environ.get(ENV_KEY), **kwargs)

    def request_body(self, request: CompletionRequest) -> dict:
        if request.image is None:
            content: object = request.prompt
        else:
            content = [
                {"type": "text", "text": request.prompt},
                {"type": "image_url", "image_url": {"url": request.image.data_url()}},
            ]
        return {
            "model": self.model,
            "messages": [{"role": "user", "content": content}],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }

    def complete(self, request: CompletionRequest) -> str:
        if request.image is not None and not self.vision:
            raise NotVisionCapable(f"model {self.model} is not configured for images")
        with self._lock:
            self._budget.spend()
        body = self.request_body(request)
        last: RemoteError | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                delay = min(self.max_backoff, self.backoff * 2 ** (attempt - 1))
                if last is not None and last.retry_after is not None:
                    delay = min(self.max_backoff, max(delay, last.retry_after))
                self._sleep(delay)
            self.attempts += 1
            try:
                resp = self._client.post(self.url, json=body, headers=self._headers)
            except httpx.TimeoutException as exc:
                last = RemoteError(f"timeout talking to {self.url}: {exc}")
                continue
            except httpx.TransportError as exc:
                last = RemoteError(f"transport error talking to {self.url}: {exc}")
                continue
            if resp.status_code == 200:
                return _first_choice(resp)
            retry_after = _retry_after(resp.headers.get("retry-after"))
            last = RemoteError(f"{self.url} returned HTTP {resp.status_code}: {resp.text[:200]}",
                               resp.status_code, retry_after)
            if resp.status_code not in self.RETRY_STATUS:
                raise last
            log.warning("attempt %d to %s failed with %s", attempt + 1, self.url, resp.status_code)
        assert last is not None
        raise last

    def complete_vision(self, request: CompletionRequest) -> str:
        if not self.vision:
            raise NotVisionCapable(f"model {self.model} is not configured for images")
        return self.complete(request)


def _retry_after(value: str | None) -> float | None:
    if value is None:
        return None
    try:
        return max(0.0, float(value))
    except ValueError:
        return None


def _first_choice(resp: httpx.Response) -> str:
    try:
        content = resp.json()["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise RemoteError(f"malformed completion response: {exc}", resp.status_code) from None
    if isinstance(content, list):
        content = "".join(part.get("text", "") for part in content if isinstance(part, dict))
    if not isinstance(content, str):
        raise RemoteError("completion content is not text", resp.status_code)
    return content


# ------------------------------------------------------ record / replay


class RecordingBackend:
    """Wraps a backend and records every exchange as a turn-indexed script."""

    def __init__(self, inner: Backend, path: str | os.PathLike | None = None) -> None:
        self.inner = inner
        self.vision = getattr(inner, "vision", False)
        self.path = Path(path) if path is not None else None
        self.entries: list[ScriptEntry] = []
        self._lock = threading.Lock()
        if self.path is not None:
            self.path.write_text("", encoding="utf-8")

    def _record(self, response: str) -> str:
        with self._lock:
            entry = ScriptEntry(response, turn=len(self.entries))
            self.entries.append(entry)
            if self.path is not None:
                with self.path.open("a", encoding="utf-8") as fh:
                    fh.write(entry.to_json() + "\n")
        return response

    def complete(self, request: CompletionRequest) -> str:
        return self._record(self.inner.complete(request))

    def complete_vision(self, request: CompletionRequest) -> str:
        return self._record(self.inner.complete_vision(request))

    def replay(self) -> ScriptedBackend:
        return ScriptedBackend(list(self.entries), vision=self.vision)
