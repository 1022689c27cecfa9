"""Chat-completion backends: live HTTP, scripted playback, and session
record/replay.

All backends expose ``complete(request) -> Completion``. Scripted and replay
backends only ever return text they were given; they never generate.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Protocol, Sequence

import httpx
import yaml

from .errors import (
    DivergenceError,
    ScenarioFormatError,
    ScriptExhaustedError,
    TransportError,
)
from .memory import ContextBundle


@dataclass(frozen=True)
class TurnRequest:
    agent_id: str
    system_prompt: str
    role_prompt: str
    context: ContextBundle | str
    instruction: str
    conversation_id: str = ""

    def __post_init__(self) -> None:
        if not self.system_prompt or not self.role_prompt:
            raise ValueError("system_prompt and role_prompt must be non-empty")

    def context_text(self) -> str:
        return self.context if isinstance(self.context, str) else self.context.render()

    def messages(self) -> list[dict[str, str]]:
        user = self.instruction
        ctx = self.context_text()
        if ctx:
            user = f"{ctx}\n\n{user}"
        return [
            {"role": "system", "content": f"{self.system_prompt}\n\n{self.role_prompt}"},
            {"role": "user", "content": user},
        ]

    def digest(self) -> str:
        payload = json.dumps(
            {"agent_id": self.agent_id, "messages": self.messages()},
            sort_keys=True,
            separators=(",", ":"),
            ensure_ascii=False,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class Completion:
    text: str
    backend_kind: str  # "live" | "scripted" | "replay"
    latency: float = 0.0


class ChatBackend(Protocol):
    def complete(self, request: TurnRequest) -> Completion: ...


def complete(backend: ChatBackend, request: TurnRequest) -> Completion:
    return backend.complete(request)


# -- scripted playback --------------------------------------------------------


class ScriptedBackend:
    """Plays queued ``(agent_id, text)`` lines per conversation, in order.

    Asking for a different agent than the next queued line raises
    :class:`DivergenceError`; running off the end raises
    :class:`ScriptExhaustedError`.
    """

    kind = "scripted"

    def __init__(self, script: Mapping[str, Sequence[tuple[str, str]]], kind: str = "scripted",
                 digests: Mapping[str, Sequence[str | None]] | None = None):
        self.kind = kind
        self._queues = {cid: deque(lines) for cid, lines in script.items()}
        self._digests = {cid: deque(d) for cid, d in (digests or {}).items()}
        self._lock = threading.Lock()

    def remaining(self, conversation_id: str) -> int:
        return len(self._queues.get(conversation_id, ()))

    def complete(self, request: TurnRequest) -> Completion:
        cid = request.conversation_id
        with self._lock:
            queue = self._queues.get(cid)
            if not queue:
                raise ScriptExhaustedError(f"no scripted line left for {request.agent_id} in {cid!r}")
            expected, text = queue[0]
            if expected != request.agent_id:
                raise DivergenceError(expected, request.agent_id, cid)
            queue.popleft()
            digests = self._digests.get(cid)
            want = digests.popleft() if digests else None
        if want is not None and want != request.digest():
            raise DivergenceError(f"request digest {want[:12]}", f"digest {request.digest()[:12]}", cid)
        return Completion(text, self.kind, 0.0)


def _parse_scenario(data: Any) -> dict[str, list[tuple[str, str]]]:
    if not isinstance(data, Mapping) or not isinstance(data.get("conversations", {}), Mapping):
        raise ScenarioFormatError("scenario must be a mapping with a 'conversations' mapping")
    script: dict[str, list[tuple[str, str]]] = {}
    for cid, turns in (data.get("conversations") or {}).items():
        if not isinstance(turns, list):
            raise ScenarioFormatError(f"conversation {cid!r} must be a list of turns")
        lines = []
        for i, t in enumerate(turns):
            if not isinstance(t, Mapping) or not isinstance(t.get("agent"), str) or not isinstance(t.get("text"), str):
                raise ScenarioFormatError(f"{cid!r} turn {i}: needs 'agent' and 'text' strings")
            lines.append((t["agent"], t["text"]))
        script[str(cid)] = lines
    return script


def read_session(path: str | Path) -> tuple[dict[str, Any], list[dict[str, Any]]]:
    """Split a session record into its header and its turn records."""
    header: dict[str, Any] = {}
    turns: list[dict[str, Any]] = []
    for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ScenarioFormatError(f"{path}:{n}: {exc}") from exc
        if rec.get("kind") == "header":
            header = rec
        else:
            for key in ("conversation_id", "agent_id", "completion"):
                if key not in rec:
                    raise ScenarioFormatError(f"{path}:{n}: session record missing {key!r}")
            turns.append(rec)
    return header, turns


def scripted_from(document: str | Path | Mapping[str, Any], verify_digests: bool = False) -> ScriptedBackend:
    """Backend from a scenario document or a recorded session.

    Scenario documents (YAML/JSON) look like
    ``{conversations: {<id>: [{agent, text}, ...]}}``. Session records are
    JSONL files written by :class:`SessionRecorder`; they replay with
    ``backend_kind="replay"``.
    """
    if isinstance(document, Mapping):
        return ScriptedBackend(_parse_scenario(document))
    path = Path(document) if not (isinstance(document, str) and "\n" in document) else None
    if path is not None and path.exists():
        if path.suffix == ".jsonl":
            _, turns = read_session(path)
            script: dict[str, list[tuple[str, str]]] = {}
            digests: dict[str, list[str | None]] = {}
            for rec in turns:
                script.setdefault(rec["conversation_id"], []).append((rec["agent_id"], rec["completion"]))
                digests.setdefault(rec["conversation_id"], []).append(
                    rec.get("request_digest") if verify_digests else None
                )
            return ScriptedBackend(script, kind="replay", digests=digests)
        text = path.read_text(encoding="utf-8")
    else:
        text = str(document)
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioFormatError(f"scenario does not parse: {exc}") from exc
    return ScriptedBackend(_parse_scenario(data or {"conversations": {}}))


# -- session recording --------------------------------------------------------


class SessionRecorder:
    """Wraps a backend and records every request/response pair.

    Records are grouped per conversation so the written file does not depend
    on how concurrent conversations interleaved.
    """

    def __init__(self, backend: ChatBackend):
        self.backend = backend
        self._records: dict[str, list[dict[str, str]]] = {}
        self._lock = threading.Lock()

    def complete(self, request: TurnRequest) -> Completion:
        completion = self.backend.complete(request)
        rec = {
            "kind": "turn",
            "conversation_id": request.conversation_id,
            "agent_id": request.agent_id,
            "request_digest": request.digest(),
            "completion": completion.text,
        }
        with self._lock:
            self._records.setdefault(request.conversation_id, []).append(rec)
        return completion

    def records(self, order: Iterable[str] | None = None) -> list[dict[str, str]]:
        with self._lock:
            keys = list(order) if order is not None else sorted(self._records)
            keys += [k for k in sorted(self._records) if k not in keys]
            return [r for k in keys for r in self._records.get(k, [])]

    def write(self, path: str | Path, header: Mapping[str, Any] | None = None,
              order: Iterable[str] | None = None) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            if header is not None:
                fh.write(json.dumps({"kind": "header", **header}, sort_keys=True, ensure_ascii=False) + "\n")
            for rec in self.records(order):
                fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False) + "\n")


# -- live adapter -------------------------------------------------------------


@dataclass
class LiveBackend:
    """OpenAI-style ``POST {endpoint}`` chat completion with retries.

    Transient failures (transport errors, 429, 5xx) are retried once per
    entry in ``backoff``, sleeping that long first; anything else fails
    immediately.
    """

    endpoint: str
    model: str
    api_key: str | None = None
    temperature: float = 0.0
    backoff: tuple[float, ...] = (1.0, 2.0, 4.0)
    timeout: float = 120.0
    client: httpx.Client | None = None
    sleep: Callable[[float], None] = field(default=time.sleep, repr=False)
    kind: str = field(default="live", init=False)

    @classmethod
    def from_env(cls, **overrides: Any) -> "LiveBackend":
        endpoint = os.environ.get("DELIB_LLM_ENDPOINT")
        model = os.environ.get("DELIB_LLM_MODEL")
        if not endpoint or not model:
            raise TransportError("set DELIB_LLM_ENDPOINT and DELIB_LLM_MODEL for the live backend")
        return cls(endpoint=endpoint, model=model, api_key=os.environ.get("DELIB_LLM_API_KEY"), **overrides)

    def complete(self, request: TurnRequest) -> Completion:
        client = self.client or httpx.Client(timeout=self.timeout)
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        payload = {"model": self.model, "temperature": self.temperature, "messages": request.messages()}
        attempts = len(self.backoff) + 1
        last_error: Exception | None = None
        for attempt in range(attempts):
            started = time.monotonic()
            try:
                resp = client.post(self.endpoint, json=payload, headers=headers)
                if resp.status_code == 429 or resp.status_code >= 500:
                    raise httpx.HTTPStatusError(f"status {resp.status_code}", request=resp.request, response=resp)
                resp.raise_for_status()
                text = resp.json()["choices"][0]["message"]["content"]
                if not text:
                    raise TransportError("empty completion")
                return Completion(text, "live", time.monotonic() - started)
            except httpx.HTTPStatusError as exc:
                if exc.response.status_code != 429 and exc.response.status_code < 500:
                    raise TransportError(str(exc)) from exc
                last_error = exc
            except httpx.TransportError as exc:
                last_error = exc
            except (KeyError, IndexError, ValueError) as exc:
                raise TransportError(f"unexpected response shape: {exc}") from exc
            if attempt + 1 < attempts:
                self.sleep(self.backoff[attempt])
        raise TransportError(f"gave up after {attempts} attempts: {last_error}")
