"""Evaluation framework: dimensions, criteria, agent roles, tools, and the
coordinator/expert mapping that decides who deliberates on which criterion.

Models are immutable once built. ``load_model`` accepts a JSON or YAML
document (or an already-parsed mapping) and either returns a fully validated
model or raises one of the typed :mod:`delib.errors` exceptions.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import yaml

from .errors import (
    CardinalityError,
    ModelReferenceError,
    NotAParticipantError,
    SchemaError,
    UnknownCriterionError,
)

REPORT_GENERATOR_ID = "report_generator"
REPORT_GENERATOR_NAME = "Report_Generator"

TOOL_KINDS = ("trends", "patents", "scholar", "web_search", "community")


@dataclass(frozen=True)
class Dimension:
    id: str
    display_name: str
    description: str = ""


@dataclass(frozen=True)
class ToolSpec:
    id: str
    display_name: str
    kind: str
    default_limit: int = 3


@dataclass(frozen=True)
class AgentRole:
    id: str
    display_name: str
    dimension: str
    description: str
    tools: tuple[str, ...] = ()
    max_sentences: int | None = 4
    is_coordinator: bool = False
    data_sources: tuple[str, ...] = ()


@dataclass(frozen=True)
class Criterion:
    id: str
    dimension: str
    display_name: str
    definition: str
    coordinator: str
    experts: tuple[str, ...]


@dataclass(frozen=True)
class RatingScale:
    min: float = 0.0
    max: float = 10.0
    step: float = 0.5

    def contains(self, value: float) -> bool:
        return self.min <= value <= self.max

    def snap(self, value: float) -> float:
        """Nearest grid point, halves rounded up, clamped to the scale."""
        n = math.floor((value - self.min) / self.step + 0.5)
        snapped = self.min + n * self.step
        return min(max(snapped, self.min), self.max)

    def on_grid(self, value: float) -> bool:
        return self.contains(value) and math.isclose(self.snap(value), value, abs_tol=1e-9)

    def grid(self) -> list[float]:
        count = int(round((self.max - self.min) / self.step))
        return [self.min + i * self.step for i in range(count + 1)]


# Pseudo-role used when composing prompts for the report synthesis turn.
REPORT_GENERATOR = AgentRole(
    id=REPORT_GENERATOR_ID,
    display_name=REPORT_GENERATOR_NAME,
    dimension="",
    description="Synthesizes the deliberation into a criterion evaluation report.",
    tools=(),
    max_sentences=None,
    is_coordinator=False,
)


@dataclass(frozen=True)
class EvaluationModel:
    dimensions: tuple[Dimension, ...]
    criteria: tuple[Criterion, ...]
    agents: tuple[AgentRole, ...]
    tool_specs: tuple[ToolSpec, ...]
    rating_scale: RatingScale = field(default_factory=RatingScale)

    def __post_init__(self) -> None:
        validate_model(self)

    def agent(self, agent_id: str) -> AgentRole:
        if agent_id == REPORT_GENERATOR_ID:
            return REPORT_GENERATOR
        for a in self.agents:
            if a.id == agent_id:
                return a
        raise ModelReferenceError(f"unknown agent {agent_id!r}")

    def criterion(self, criterion_id: str) -> Criterion:
        for c in self.criteria:
            if c.id == criterion_id:
                return c
        raise UnknownCriterionError(criterion_id)

    def dimension(self, dimension_id: str) -> Dimension:
        for d in self.dimensions:
            if d.id == dimension_id:
                return d
        raise ModelReferenceError(f"unknown dimension {dimension_id!r}")

    def tool(self, tool_id: str) -> ToolSpec:
        for t in self.tool_specs:
            if t.id == tool_id:
                return t
        raise ModelReferenceError(f"unknown tool {tool_id!r}")


def participants_for(model: EvaluationModel, criterion_id: str) -> tuple[AgentRole, list[AgentRole]]:
    """Coordinator and experts of a criterion, experts in declaration order.

    The order is the fallback routing sequence used when an agent's routing
    line cannot be repaired.
    """
    crit = model.criterion(criterion_id)
    return model.agent(crit.coordinator), [model.agent(e) for e in crit.experts]


def role_in(model: EvaluationModel, agent_id: str, criterion_id: str) -> str:
    """Return ``"coordinator"``, ``"expert"`` or ``"report_generator"``."""
    crit = model.criterion(criterion_id)
    if agent_id == REPORT_GENERATOR_ID:
        return "report_generator"
    if agent_id == crit.coordinator:
        return "coordinator"
    if agent_id in crit.experts:
        return "expert"
    raise NotAParticipantError(f"agent {agent_id!r} does not participate in {criterion_id!r}")


def validate_model(model: EvaluationModel) -> None:
    """Check every cross-reference and cardinality rule; raise on the first failure."""
    dim_ids = _unique([d.id for d in model.dimensions], "dimension")
    tool_ids = _unique([t.id for t in model.tool_specs], "tool")
    agent_ids = _unique([a.id for a in model.agents], "agent")
    _unique([c.id for c in model.criteria], "criterion")

    scale = model.rating_scale
    if not scale.min < scale.max:
        raise SchemaError(f"rating_scale min {scale.min} must be below max {scale.max}")
    if not scale.step > 0:
        raise SchemaError(f"rating_scale step must be positive, got {scale.step}")

    for t in model.tool_specs:
        if t.kind not in TOOL_KINDS:
            raise SchemaError(f"tool {t.id!r}: kind {t.kind!r} not one of {TOOL_KINDS}")
        if t.default_limit < 1:
            raise CardinalityError(f"tool {t.id!r}: default_limit must be >= 1")

    agents = {a.id: a for a in model.agents}
    if REPORT_GENERATOR_ID in agents:
        raise CardinalityError(f"agent id {REPORT_GENERATOR_ID!r} is reserved")
    for a in model.agents:
        if a.dimension not in dim_ids:
            raise ModelReferenceError(f"agent {a.id!r}: unknown dimension {a.dimension!r}")
        for t in a.tools:
            if t not in tool_ids:
                raise ModelReferenceError(f"agent {a.id!r}: unknown tool {t!r}")
        if a.max_sentences is not None and a.max_sentences < 1:
            raise CardinalityError(f"agent {a.id!r}: max_sentences must be >= 1")

    for c in model.criteria:
        if c.dimension not in dim_ids:
            raise ModelReferenceError(f"criterion {c.id!r}: unknown dimension {c.dimension!r}")
        if not c.experts:
            raise CardinalityError(f"criterion {c.id!r}: experts list is empty")
        for ref in (c.coordinator, *c.experts):
            if ref not in agent_ids:
                raise ModelReferenceError(f"criterion {c.id!r}: unknown agent {ref!r}")
        if len(set(c.experts)) != len(c.experts):
            raise CardinalityError(f"criterion {c.id!r}: duplicate experts")
        if c.coordinator in c.experts:
            raise CardinalityError(f"criterion {c.id!r}: coordinator also listed as expert")
        if not agents[c.coordinator].is_coordinator:
            raise ModelReferenceError(f"criterion {c.id!r}: {c.coordinator!r} is not a coordinator role")
        for ref in (c.coordinator, *c.experts):
            if agents[ref].dimension != c.dimension:
                raise ModelReferenceError(
                    f"criterion {c.id!r}: agent {ref!r} belongs to {agents[ref].dimension!r}"
                )


def _unique(ids: list[str], what: str) -> set[str]:
    seen: set[str] = set()
    for i in ids:
        if i in seen:
            raise CardinalityError(f"duplicate {what} id {i!r}")
        seen.add(i)
    return seen


# -- config documents ---------------------------------------------------------


def load_model(document: str | bytes | Path | Mapping[str, Any]) -> EvaluationModel:
    """Build a validated model from a config document.

    ``document`` may be a path, JSON/YAML text, or an already-parsed mapping.
    """
    if isinstance(document, Path):
        document = document.read_text(encoding="utf-8")
    if isinstance(document, bytes):
        document = document.decode("utf-8")
    if isinstance(document, str):
        try:
            data = yaml.safe_load(document)  # JSON is a YAML subset
        except yaml.YAMLError as exc:
            raise SchemaError(f"config does not parse: {exc}") from exc
    else:
        data = document
    if not isinstance(data, Mapping):
        raise SchemaError("config root must be a mapping")

    for key in ("dimensions", "agents", "criteria", "tools"):
        if key not in data:
            raise SchemaError(f"missing top-level key {key!r}")

    dims = tuple(
        Dimension(
            id=_str(d, "id", "dimension"),
            display_name=_str(d, "display_name", "dimension"),
            description=_str(d, "description", "dimension", default=""),
        )
        for d in _list(data, "dimensions")
    )
    tools = tuple(
        ToolSpec(
            id=_str(t, "id", "tool"),
            display_name=_str(t, "display_name", "tool"),
            kind=_str(t, "kind", "tool"),
            default_limit=_int(t, "default_limit", "tool", default=3),
        )
        for t in _list(data, "tools")
    )
    agents = tuple(
        AgentRole(
            id=_str(a, "id", "agent"),
            display_name=_str(a, "display_name", "agent"),
            dimension=_str(a, "dimension", "agent"),
            description=_str(a, "description", "agent", default=""),
            tools=_strs(a, "tools", "agent", default=()),
            max_sentences=_int(a, "max_sentences", "agent", default=None),
            is_coordinator=_bool(a, "is_coordinator", "agent", default=False),
            data_sources=_strs(a, "data_sources", "agent", default=()),
        )
        for a in _list(data, "agents")
    )
    criteria = tuple(
        Criterion(
            id=_str(c, "id", "criterion"),
            dimension=_str(c, "dimension", "criterion"),
            display_name=_str(c, "display_name", "criterion"),
            definition=_str(c, "definition", "criterion"),
            coordinator=_str(c, "coordinator", "criterion"),
            experts=_strs(c, "experts", "criterion"),
        )
        for c in _list(data, "criteria")
    )
    scale_doc = data.get("rating_scale", {})
    if not isinstance(scale_doc, Mapping):
        raise SchemaError("rating_scale must be a mapping")
    scale = RatingScale(
        min=_num(scale_doc, "min", "rating_scale", 0.0),
        max=_num(scale_doc, "max", "rating_scale", 10.0),
        step=_num(scale_doc, "step", "rating_scale", 0.5),
    )
    return EvaluationModel(dims, criteria, agents, tools, scale)


def serialize_model(model: EvaluationModel) -> dict[str, Any]:
    """Plain-data form of ``model``; ``load_model`` inverts it exactly."""
    return {
        "dimensions": [
            {"id": d.id, "display_name": d.display_name, "description": d.description}
            for d in model.dimensions
        ],
        "tools": [
            {"id": t.id, "display_name": t.display_name, "kind": t.kind, "default_limit": t.default_limit}
            for t in model.tool_specs
        ],
        "agents": [
            {
                "id": a.id,
                "display_name": a.display_name,
                "dimension": a.dimension,
                "description": a.description,
                "data_sources": list(a.data_sources),
                "tools": list(a.tools),
                "max_sentences": a.max_sentences,
                "is_coordinator": a.is_coordinator,
            }
            for a in model.agents
        ],
        "criteria": [
            {
                "id": c.id,
                "dimension": c.dimension,
                "display_name": c.display_name,
                "definition": c.definition,
                "coordinator": c.coordinator,
                "experts": list(c.experts),
            }
            for c in model.criteria
        ],
        "rating_scale": {
            "min": model.rating_scale.min,
            "max": model.rating_scale.max,
            "step": model.rating_scale.step,
        },
    }


def dump_model(model: EvaluationModel, fmt: str = "yaml") -> str:
    data = serialize_model(model)
    if fmt == "json":
        return json.dumps(data, indent=2, ensure_ascii=False) + "\n"
    return yaml.safe_dump(data, sort_keys=False, allow_unicode=True, width=100)


def default_model_text() -> str:
    return resources.files("delib").joinpath("default_model.yaml").read_text(encoding="utf-8")


@lru_cache(maxsize=1)
def default_model() -> EvaluationModel:
    """The built-in eight-agent, six-criterion framework."""
    return load_model(default_model_text())


# -- field readers ------------------------------------------------------------

_MISSING = object()


def _list(doc: Mapping[str, Any], key: str) -> list[Mapping[str, Any]]:
    value = doc[key]
    if not isinstance(value, list) or not all(isinstance(v, Mapping) for v in value):
        raise SchemaError(f"{key!r} must be a list of mappings")
    return value


def _get(doc: Mapping[str, Any], key: str, where: str, default: Any) -> Any:
    if key in doc and doc[key] is not None:
        return doc[key]
    if default is _MISSING:
        ident = doc.get("id", "?")
        raise SchemaError(f"{where} {ident!r}: missing field {key!r}")
    return default


def _str(doc, key, where, default=_MISSING) -> str:
    value = _get(doc, key, where, default)
    if not isinstance(value, str):
        raise SchemaError(f"{where} field {key!r} must be text, got {type(value).__name__}")
    return value


def _strs(doc, key, where, default=_MISSING) -> tuple[str, ...]:
    value = _get(doc, key, where, default)
    if not isinstance(value, (list, tuple)) or not all(isinstance(v, str) for v in value):
        raise SchemaError(f"{where} field {key!r} must be a list of text")
    return tuple(value)


def _int(doc, key, where, default=_MISSING) -> int | None:
    value = _get(doc, key, where, default)
    if value is None:
        return None
    if isinstance(value, bool) or not isinstance(value, int):
        raise SchemaError(f"{where} field {key!r} must be an integer")
    return value


def _bool(doc, key, where, default=_MISSING) -> bool:
    value = _get(doc, key, where, default)
    if not isinstance(value, bool):
        raise SchemaError(f"{where} field {key!r} must be a boolean")
    return value


def _num(doc, key, where, default) -> float:
    value = _get(doc, key, where, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SchemaError(f"{where} field {key!r} must be a number")
    return float(value)
