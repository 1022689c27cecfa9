from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field, replace
from typing import Any, Mapping

from .errors import SchemaError


@dataclass(frozen=True)
class RunConfig:
    """Per-run settings shared by every criterion conversation.

    ``current_date`` has no default on purpose: agents fall back on stale
    training knowledge when the evaluation date is left implicit.
    """

    current_date: dt.date
    max_turns: int = 24
    tool_limits: Mapping[str, int] = field(default_factory=dict)
    tool_limit_scope: str = "shared"  # or "per_agent"
    recent_window: int = 6
    retrieval_k: int = 3
    prompt_char_budget: int = 6000
    chunk_size: int = 2000
    chunk_overlap: int = 200
    memory_scope: str = "criterion"  # or "concept": tool memory shared across criteria

    def __post_init__(self) -> None:
        if not isinstance(self.current_date, dt.date):
            raise SchemaError("RunConfig.current_date must be a date")
        if self.max_turns < 1:
            raise SchemaError("max_turns must be positive")
        if self.recent_window < 0 or self.retrieval_k < 0:
            raise SchemaError("recent_window and retrieval_k must be >= 0")
        if any(v < 0 for v in self.tool_limits.values()):
            raise SchemaError("tool limits must be >= 0")
        if self.tool_limit_scope not in ("shared", "per_agent"):
            raise SchemaError(f"unknown tool_limit_scope {self.tool_limit_scope!r}")
        if self.memory_scope not in ("criterion", "concept"):
            raise SchemaError(f"unknown memory_scope {self.memory_scope!r}")

    def check_turn_cap(self, n_experts: int) -> None:
        if self.max_turns < n_experts + 2:
            raise SchemaError(
                f"max_turns={self.max_turns} cannot fit a coordinator, {n_experts} experts and a report"
            )

    def to_dict(self) -> dict[str, Any]:
        return {
            "current_date": self.current_date.isoformat(),
            "max_turns": self.max_turns,
            "tool_limits": dict(sorted(self.tool_limits.items())),
            "tool_limit_scope": self.tool_limit_scope,
            "recent_window": self.recent_window,
            "retrieval_k": self.retrieval_k,
            "prompt_char_budget": self.prompt_char_budget,
            "chunk_size": self.chunk_size,
            "chunk_overlap": self.chunk_overlap,
            "memory_scope": self.memory_scope,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RunConfig":
        if "current_date" not in data:
            raise SchemaError("run config needs current_date")
        kwargs = dict(data)
        kwargs["current_date"] = dt.date.fromisoformat(str(kwargs["current_date"]))
        kwargs["tool_limits"] = dict(kwargs.get("tool_limits") or {})
        return cls(**kwargs)

    def with_(self, **changes: Any) -> "RunConfig":
        return replace(self, **changes)
