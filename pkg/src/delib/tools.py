"""Evidence tools: per-conversation budgets, an audit log, a fixture replay
backend, and thin HTTP adapters for live services."""

from __future__ import annotations

import json
import os
import threading
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Protocol

import httpx
import yaml

from .errors import (
    FixtureFormatError,
    ToolBackendError,
    ToolBindingError,
    UnknownToolError,
)
from .evaluation_model import EvaluationModel, ToolSpec

OK = "ok"
BACKEND_ERROR = "backend_error"
BUDGET_EXHAUSTED = "budget_exhausted"

NO_RESULTS = "no results"


class ToolBackend(Protocol):
    def search(self, tool_id: str, query: str) -> str: ...


@dataclass(frozen=True)
class ToolCall:
    call_id: int
    conversation_id: str
    agent_id: str
    tool_id: str
    query: str
    turn_index: int
    status: str
    result_text: str = ""
    error: str = ""

    def __post_init__(self) -> None:
        if (self.status == OK) != bool(self.result_text):
            raise ValueError("status ok iff result_text is non-empty")

    def to_record(self) -> dict[str, Any]:
        return asdict(self)


def normalize_query(query: str) -> str:
    return " ".join(query.lower().split())


class FixtureBackend:
    """Answers exact normalized (tool, query) matches from a fixed table."""

    def __init__(self, entries: Mapping[tuple[str, str], str | Exception], strict: bool = False,
                 default: str = NO_RESULTS):
        self._entries = dict(entries)
        self.strict = strict
        self.default = default

    def search(self, tool_id: str, query: str) -> str:
        hit = self._entries.get((tool_id, normalize_query(query)))
        if hit is None:
            if self.strict:
                raise ToolBackendError(f"no fixture for {tool_id}: {query!r}")
            return self.default
        if isinstance(hit, Exception):
            raise ToolBackendError(str(hit))
        return hit

    def __len__(self) -> int:
        return len(self._entries)


def load_fixtures(document: str | Path | Iterable[Mapping[str, Any]], strict: bool = False) -> FixtureBackend:
    """Build a replay backend from ``[{tool, query, result}]`` records.

    A record may carry ``error`` instead of ``result`` to replay a failed call.
    ``document`` may be a path (JSON, YAML or JSONL), text, or parsed records.
    """
    if isinstance(document, Path) or (isinstance(document, str) and "\n" not in document and Path(document).exists()):
        path = Path(document)
        text = path.read_text(encoding="utf-8")
        if path.suffix == ".jsonl":
            records = [json.loads(ln) for ln in text.splitlines() if ln.strip()]
        else:
            records = yaml.safe_load(text)
    elif isinstance(document, str):
        records = yaml.safe_load(document)
    else:
        records = list(document)
    if isinstance(records, Mapping) and "fixtures" in records:
        records = records["fixtures"]
    if not isinstance(records, list):
        raise FixtureFormatError("fixture document must be a list of {tool, query, result}")
    entries: dict[tuple[str, str], str | Exception] = {}
    for i, rec in enumerate(records):
        if not isinstance(rec, Mapping) or "tool" not in rec or "query" not in rec:
            raise FixtureFormatError(f"fixture #{i} needs 'tool' and 'query'")
        if "result" in rec and isinstance(rec["result"], str) and rec["result"]:
            value: str | Exception = rec["result"]
        elif "error" in rec:
            value = ToolBackendError(str(rec["error"]))
        else:
            raise FixtureFormatError(f"fixture #{i} needs a non-empty 'result' or an 'error'")
        entries[(str(rec["tool"]), normalize_query(str(rec["query"])))] = value
    return FixtureBackend(entries, strict=strict)


def fixtures_from_audit(calls: Iterable[ToolCall]) -> list[dict[str, str]]:
    """Fixture records that reproduce every backend-reaching call in ``calls``."""
    out: list[dict[str, str]] = []
    seen: set[tuple[str, str]] = set()
    for c in calls:
        if c.status == BUDGET_EXHAUSTED:
            continue
        key = (c.tool_id, normalize_query(c.query))
        if key in seen:
            continue
        seen.add(key)
        if c.status == OK:
            out.append({"tool": c.tool_id, "query": c.query, "result": c.result_text})
        else:
            out.append({"tool": c.tool_id, "query": c.query, "error": c.error or "backend error"})
    return out


class HttpToolBackend:
    """Generic live adapter: ``GET <endpoint>?q=<query>`` per tool.

    Endpoints come from config; the key for tool ``x`` is read from the
    ``DELIB_TOOL_X_KEY`` environment variable and sent as a bearer token.
    The response body is used as-is unless it is JSON with a ``result`` or
    ``results`` field.
    """

    def __init__(self, endpoints: Mapping[str, str], client: httpx.Client | None = None, timeout: float = 20.0):
        self.endpoints = dict(endpoints)
        self.client = client or httpx.Client(timeout=timeout)

    def search(self, tool_id: str, query: str) -> str:
        url = self.endpoints.get(tool_id)
        if not url:
            raise ToolBackendError(f"no endpoint configured for {tool_id}")
        headers = {}
        key = os.environ.get(f"DELIB_TOOL_{tool_id.upper()}_KEY")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        try:
            resp = self.client.get(url, params={"q": query}, headers=headers)
            resp.raise_for_status()
        except httpx.HTTPError as exc:
            raise ToolBackendError(f"{tool_id}: {exc}") from exc
        if "json" in resp.headers.get("content-type", ""):
            data = resp.json()
            if isinstance(data, Mapping):
                if isinstance(data.get("result"), str):
                    return data["result"]
                if isinstance(data.get("results"), list):
                    return "\n".join(
                        r if isinstance(r, str) else json.dumps(r, sort_keys=True) for r in data["results"]
                    )
            return json.dumps(data, sort_keys=True)
        return resp.text


class ToolPool:
    """Registry plus budgets. Budgets and call ids are keyed by conversation,
    so every criterion conversation starts with full limits and call #0.

    ``scope="shared"`` gives one counter per tool per conversation;
    ``scope="per_agent"`` gives each agent its own counter.
    """

    def __init__(
        self,
        model: EvaluationModel,
        backend: ToolBackend,
        limits: Mapping[str, int] | None = None,
        scope: str = "shared",
    ):
        if scope not in ("shared", "per_agent"):
            raise ValueError(f"unknown scope {scope!r}")
        self.model = model
        self.backend = backend
        self.specs: dict[str, ToolSpec] = {t.id: t for t in model.tool_specs}
        self.limits = {t: (limits or {}).get(t, spec.default_limit) for t, spec in self.specs.items()}
        self.scope = scope
        self.audit: list[ToolCall] = []
        self._used: dict[tuple[str, str, str], int] = {}
        self._lock = threading.Lock()
        self._next_call: dict[str, int] = {}

    def _key(self, conversation_id: str, tool_id: str, agent_id: str) -> tuple[str, str, str]:
        return (conversation_id, tool_id, agent_id if self.scope == "per_agent" else "")

    def _spec(self, tool_id: str) -> ToolSpec:
        try:
            return self.specs[tool_id]
        except KeyError:
            raise UnknownToolError(tool_id) from None

    def remaining_budget(self, conversation_id: str, tool_id: str, agent_id: str = "") -> int:
        self._spec(tool_id)
        used = self._used.get(self._key(conversation_id, tool_id, agent_id), 0)
        return max(self.limits[tool_id] - used, 0)

    def invoke(self, conversation_id: str, agent_id: str, tool_id: str, query: str, turn_index: int = 0) -> ToolCall:
        self._spec(tool_id)
        agent = self.model.agent(agent_id)
        if tool_id not in agent.tools:
            raise ToolBindingError(f"agent {agent_id!r} is not bound to tool {tool_id!r}")
        key = self._key(conversation_id, tool_id, agent_id)
        with self._lock:
            call_id = self._next_call.get(conversation_id, 0)
            self._next_call[conversation_id] = call_id + 1
            exhausted = self._used.get(key, 0) >= self.limits[tool_id]
            if not exhausted:
                self._used[key] = self._used.get(key, 0) + 1
        if exhausted:
            call = ToolCall(call_id, conversation_id, agent_id, tool_id, query, turn_index, BUDGET_EXHAUSTED)
        else:
            try:
                text = self.backend.search(tool_id, query)
                if not text:
                    raise ToolBackendError("empty result")
                call = ToolCall(call_id, conversation_id, agent_id, tool_id, query, turn_index, OK, text)
            except ToolBackendError as exc:
                call = ToolCall(call_id, conversation_id, agent_id, tool_id, query, turn_index,
                                BACKEND_ERROR, error=str(exc))
        with self._lock:
            self.audit.append(call)
        return call

    def calls_for(self, conversation_id: str) -> list[ToolCall]:
        return [c for c in self.audit if c.conversation_id == conversation_id]

    def dump_audit(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for c in self.audit:
                fh.write(json.dumps(c.to_record(), sort_keys=True) + "\n")


def remaining_budget(pool: ToolPool, conversation_id: str, tool_id: str) -> int:
    return pool.remaining_budget(conversation_id, tool_id)


def invoke(pool: ToolPool, conversation_id: str, agent_id: str, tool_id: str, query: str) -> ToolCall:
    return pool.invoke(conversation_id, agent_id, tool_id, query)
