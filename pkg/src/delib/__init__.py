"""Coordinator-led multi-agent deliberation for product concept evaluation."""

from .backends import Completion, LiveBackend, ScriptedBackend, SessionRecorder, TurnRequest, scripted_from
from .evaluation_model import EvaluationModel, RatingScale, default_model, load_model
from .memory import HashingEmbedder, MemoryStore, build_context, retrieve
from .orchestrator import (
    ConceptScorecard,
    CriterionOutcome,
    DeliberationState,
    EngineDeps,
    Phase,
    StepDeps,
    initial_state,
    run_concept,
    run_criterion,
    step,
)
from .prompt_engine import compose_prompts, render
from .protocol import Stance, detect_consensus, format_rating, parse_rating, parse_routing
from .run_config import RunConfig
from .scoring import RatingTable, aggregate, compare, kendall_tau, rank, render_report
from .tools import FixtureBackend, ToolPool, load_fixtures

__all__ = [
    "Completion", "LiveBackend", "ScriptedBackend", "SessionRecorder", "TurnRequest", "scripted_from",
    "EvaluationModel", "RatingScale", "default_model", "load_model",
    "HashingEmbedder", "MemoryStore", "build_context", "retrieve",
    "ConceptScorecard", "CriterionOutcome", "DeliberationState", "EngineDeps", "Phase", "StepDeps",
    "initial_state", "run_concept", "run_criterion", "step",
    "compose_prompts", "render",
    "Stance", "detect_consensus", "format_rating", "parse_rating", "parse_routing",
    "RunConfig",
    "RatingTable", "aggregate", "compare", "kendall_tau", "rank", "render_report",
    "FixtureBackend", "ToolPool", "load_fixtures",
]
