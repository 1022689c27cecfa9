"""Deliberation state machine and the run loops built on it.

``step`` is a pure transition: it takes the current state and one completion
and returns the next state plus commands (tool invocations, repair re-asks)
for the caller to execute. ``run_criterion`` drives one criterion
conversation end to end; ``run_concept`` runs every criterion of the model
with isolated memory and budgets.

Phases::

    coordinator_turn -> expert_turn(a) -> ... -> report_generation -> done
                                                                    \\-> failed(reason)
"""

from __future__ import annotations

import enum
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Mapping, Sequence

from .backends import ChatBackend, Completion, TurnRequest
from .errors import BackendError, MalformedRoutingError, ProtocolViolation
from .evaluation_model import (
    REPORT_GENERATOR_ID,
    EvaluationModel,
    RatingScale,
)
from .memory import ChatSource, Embedder, MemoryStore, ToolSource, build_context
from .prompt_engine import PromptTemplate, compose_prompts
from .protocol import (
    Message,
    RatingEvent,
    RoutingDirective,
    Stance,
    detect_consensus,
    ends_with_final_answer,
    parse_rating,
    parse_routing,
    parse_tool_notice,
    parse_tool_requests,
    sentence_limit_exceeded,
)
from .run_config import RunConfig
from .tools import OK, ToolBackend, ToolCall, ToolPool

log = logging.getLogger(__name__)


class Phase(str, enum.Enum):
    COORDINATOR_TURN = "coordinator_turn"
    EXPERT_TURN = "expert_turn"
    REPORT_GENERATION = "report_generation"
    DONE = "done"
    FAILED = "failed"


TERMINAL = (Phase.DONE, Phase.FAILED)


@dataclass(frozen=True)
class Violation:
    turn_index: int
    speaker: str
    kind: str
    detail: str = ""


@dataclass(frozen=True)
class ToolCommand:
    agent_id: str
    tool_id: str
    query: str
    turn_index: int


@dataclass(frozen=True)
class RepairCommand:
    agent_id: str
    instruction: str


Command = ToolCommand | RepairCommand


@dataclass(frozen=True)
class TurnRecord:
    message: Message
    rating: RatingEvent | None = None
    routing: RoutingDirective | None = None
    tool_requests: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class DeliberationState:
    conversation_id: str
    criterion_id: str
    phase: Phase
    speaker: str
    turn_index: int = 0
    rating_history: tuple[RatingEvent, ...] = ()
    routing_trace: tuple[RoutingDirective, ...] = ()
    turns: tuple[TurnRecord, ...] = ()
    repairs: int = 0
    consensus: bool = False
    forced: bool = False
    failure: str = ""
    violations: tuple[Violation, ...] = ()
    rejected: tuple[Message, ...] = ()
    phase_trace: tuple[str, ...] = ()

    @property
    def label(self) -> str:
        if self.phase is Phase.EXPERT_TURN:
            return f"expert_turn({self.speaker})"
        if self.phase is Phase.FAILED:
            return f"failed({self.failure})"
        return self.phase.value

    @property
    def transcript(self) -> tuple[Message, ...]:
        return tuple(t.message for t in self.turns)

    @property
    def done(self) -> bool:
        return self.phase in TERMINAL


def initial_state(conversation_id: str, criterion_id: str, coordinator_id: str) -> DeliberationState:
    state = DeliberationState(conversation_id, criterion_id, Phase.COORDINATOR_TURN, coordinator_id)
    return replace(state, phase_trace=(state.label,))


def _advance(state: DeliberationState, **changes: Any) -> DeliberationState:
    new = replace(state, **changes)
    if new.label != state.label or "turn_index" in changes:
        new = replace(new, phase_trace=state.phase_trace + (new.label,))
    return new


@dataclass(frozen=True)
class StepDeps:
    """Everything ``step`` needs besides the state: participants, limits, tools."""

    coordinator: str
    experts: tuple[str, ...]
    display_names: Mapping[str, str]
    agent_tools: Mapping[str, tuple[str, ...]]
    max_sentences: Mapping[str, int | None]
    tool_names: Mapping[str, str]
    scale: RatingScale
    max_turns: int

    @classmethod
    def build(cls, model: EvaluationModel, criterion_id: str, run: RunConfig) -> "StepDeps":
        crit = model.criterion(criterion_id)
        members = (crit.coordinator, *crit.experts)
        return cls(
            coordinator=crit.coordinator,
            experts=tuple(crit.experts),
            display_names={a: model.agent(a).display_name for a in members},
            agent_tools={a: model.agent(a).tools for a in members},
            max_sentences={a: model.agent(a).max_sentences for a in members},
            tool_names={t.id: t.display_name for t in model.tool_specs},
            scale=model.rating_scale,
            max_turns=run.max_turns,
        )

    def routing_candidates(self, speaker: str) -> dict[str, str]:
        names = {e: self.display_names[e] for e in self.experts if e != speaker or len(self.experts) == 1}
        names[REPORT_GENERATOR_ID] = "Report_Generator"
        return names

    def next_in_order(self, speaker: str) -> str:
        if speaker not in self.experts:
            return self.experts[0]
        i = self.experts.index(speaker)
        return self.experts[(i + 1) % len(self.experts)]


def repair_instruction(deps: StepDeps, speaker: str) -> str:
    names = ", ".join(deps.routing_candidates(speaker).values())
    return (
        "Your previous message did not end with a valid routing line. Resend your message and end it "
        f"with exactly one of these names on its own line: {names}."
    )


def step(state: DeliberationState, completion: Completion | str, deps: StepDeps) -> tuple[DeliberationState, list[Command]]:
    """Apply one completion to the state machine."""
    if state.done:
        raise ValueError(f"conversation {state.conversation_id} already {state.phase.value}")
    body = completion if isinstance(completion, str) else completion.text
    if state.phase is Phase.REPORT_GENERATION:
        return _step_report(state, body)
    return _step_discussion(state, body, deps)


def _step_report(state: DeliberationState, body: str) -> tuple[DeliberationState, list[Command]]:
    speaker = REPORT_GENERATOR_ID
    msg = Message(speaker, state.turn_index, body)
    if ends_with_final_answer(body):
        return _advance(
            state,
            phase=Phase.DONE,
            speaker="",
            turn_index=state.turn_index + 1,
            turns=state.turns + (TurnRecord(msg),),
            repairs=0,
        ), []
    v = Violation(state.turn_index, speaker, "missing_final_answer", "report does not end with FINAL_ANSWER")
    if state.repairs == 0:
        return replace(
            state, repairs=1, violations=state.violations + (v,), rejected=state.rejected + (msg,)
        ), [RepairCommand(speaker, "End the report with FINAL_ANSWER on its own line. Resend the full report.")]
    return _advance(
        state,
        phase=Phase.FAILED,
        failure="report missing FINAL_ANSWER",
        violations=state.violations + (v,),
        rejected=state.rejected + (msg,),
    ), []


def _step_discussion(state: DeliberationState, body: str, deps: StepDeps) -> tuple[DeliberationState, list[Command]]:
    speaker = state.speaker
    turn = state.turn_index
    is_expert = state.phase is Phase.EXPERT_TURN
    violations: list[Violation] = []

    def note(kind: str, detail: str = "") -> None:
        violations.append(Violation(turn, speaker, kind, detail))

    # routing first: a malformed first attempt is rejected outright
    try:
        directive = parse_routing(body, deps.routing_candidates(speaker)) if body.strip() else None
        if directive is None:
            raise MalformedRoutingError("")
    except MalformedRoutingError as exc:
        note("malformed_routing", exc.line)
        if state.repairs == 0:
            msg = Message(speaker, turn, body)
            return replace(
                state,
                repairs=1,
                violations=state.violations + tuple(violations),
                rejected=state.rejected + (msg,),
            ), [RepairCommand(speaker, repair_instruction(deps, speaker))]
        fallback = deps.next_in_order(speaker)
        note("rerouted", f"fallback to {fallback}")
        directive = RoutingDirective.to_expert(fallback)

    commands: list[Command] = []
    requests = parse_tool_requests(body)
    allowed = deps.agent_tools.get(speaker, ())
    usable = []
    for req in requests:
        if req.tool_id not in deps.tool_names:
            note("unknown_tool", req.tool_id)
        elif req.tool_id not in allowed:
            note("unbound_tool", req.tool_id)
        else:
            usable.append(req)
    if len(usable) > 1:
        note("multiple_tool_requests", f"{len(usable)} requests; only the first is executed")
        usable = usable[:1]
    for req in usable:
        commands.append(ToolCommand(speaker, req.tool_id, req.query, turn))
    try:
        notice = parse_tool_notice(body, deps.tool_names)
    except ProtocolViolation as exc:
        note("unknown_tool_notice", str(exc.value))
        notice = None
    if not requests and notice is None:
        note("missing_tool_use")

    if sentence_limit_exceeded(body, deps.max_sentences.get(speaker)):
        note("sentence_limit", f"limit {deps.max_sentences.get(speaker)}")

    history = state.rating_history
    rating_event = None
    if is_expert:
        try:
            parsed = parse_rating(body, deps.scale)
        except ProtocolViolation as exc:
            note("off_scale_rating", str(exc.value))
            parsed = None
        if parsed is None:
            note("no_rating")
        else:
            value = deps.scale.snap(parsed.value)
            if value != parsed.value:
                note("off_grid_rating", f"{parsed.value:g} snapped to {value:g}")
            if parsed.stance is Stance.AGREE and history and history[-1].value != value:
                note("agree_mismatch", f"agreed with {value:g} but current is {history[-1].value:g}")
            rating_event = RatingEvent(speaker, turn, value, parsed.stance)
            history = history + (rating_event,)
    elif parse_rating_safe(body, deps.scale) is not None:
        note("coordinator_rating_ignored")

    new_turn = turn + 1
    consensus = False
    if directive.kind == "report_generator":
        status = detect_consensus(history, deps.experts)
        if status.reached:
            consensus = True
            next_phase, next_speaker = Phase.REPORT_GENERATION, REPORT_GENERATOR_ID
        else:
            note("premature_report", f"holdouts: {', '.join(status.holdouts)}")
            others = [h for h in status.holdouts if h != speaker]
            target = (others or list(status.holdouts))[0]
            directive = RoutingDirective.to_expert(target)
            next_phase, next_speaker = Phase.EXPERT_TURN, target
    else:
        next_phase, next_speaker = Phase.EXPERT_TURN, directive.agent_id

    forced = False
    if next_phase is Phase.EXPERT_TURN and new_turn >= deps.max_turns - 1:
        note("turn_cap", f"max_turns={deps.max_turns} reached; forcing report")
        forced = True
        next_phase, next_speaker = Phase.REPORT_GENERATION, REPORT_GENERATOR_ID

    record = TurnRecord(
        Message(speaker, turn, body),
        rating_event,
        directive,
        tuple((r.tool_id, r.query) for r in usable),
    )
    new_state = _advance(
        state,
        phase=next_phase,
        speaker=next_speaker,
        turn_index=new_turn,
        rating_history=history,
        routing_trace=state.routing_trace + (directive,),
        turns=state.turns + (record,),
        repairs=0,
        consensus=consensus,
        forced=forced,
        violations=state.violations + tuple(violations),
    )
    return new_state, commands


def parse_rating_safe(body: str, scale: RatingScale):
    try:
        return parse_rating(body, scale)
    except ProtocolViolation:
        return None


def fail(state: DeliberationState, reason: str) -> DeliberationState:
    return _advance(state, phase=Phase.FAILED, failure=reason)


# -- outcomes -----------------------------------------------------------------


@dataclass(frozen=True)
class CriterionOutcome:
    criterion_id: str
    conversation_id: str
    status: str
    final_rating: float | None
    consensus: bool
    forced: bool
    rating_evolution: Mapping[str, tuple[float, ...]]
    report_text: str
    transcript: tuple[Message, ...]
    turns: tuple[TurnRecord, ...]
    tool_audit: tuple[ToolCall, ...]
    violations: tuple[Violation, ...]
    phase_trace: tuple[str, ...]
    failure_reason: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "done" and self.final_rating is not None


def rating_evolution(history: Sequence[RatingEvent], experts: Sequence[str]) -> dict[str, tuple[float, ...]]:
    grouped: dict[str, list[float]] = {e: [] for e in experts}
    for ev in history:
        grouped.setdefault(ev.speaker, []).append(ev.value)
    return {k: tuple(v) for k, v in grouped.items()}


def outcome_from_state(state: DeliberationState, experts: Sequence[str], audit: Sequence[ToolCall]) -> CriterionOutcome:
    if state.consensus:
        final = state.rating_history[-1].value
    elif state.rating_history:
        final = state.rating_history[-1].value
    else:
        final = None
    report = ""
    if state.phase is Phase.DONE and state.turns and state.turns[-1].message.speaker == REPORT_GENERATOR_ID:
        report = state.turns[-1].message.body
    return CriterionOutcome(
        criterion_id=state.criterion_id,
        conversation_id=state.conversation_id,
        status="done" if state.phase is Phase.DONE else "failed",
        final_rating=final if state.phase is Phase.DONE else None,
        consensus=state.consensus,
        forced=state.forced,
        rating_evolution=rating_evolution(state.rating_history, experts),
        report_text=report,
        transcript=state.transcript,
        turns=state.turns,
        tool_audit=tuple(audit),
        violations=state.violations,
        phase_trace=state.phase_trace,
        failure_reason=state.failure,
    )


def transcript_records(outcome: CriterionOutcome) -> list[dict[str, Any]]:
    """Line-delimited export rows: one per accepted message."""
    by_turn: dict[int, list[dict[str, Any]]] = {}
    for call in outcome.tool_audit:
        by_turn.setdefault(call.turn_index, []).append(
            {"call_id": call.call_id, "tool": call.tool_id, "query": call.query, "status": call.status}
        )
    rows = []
    for rec in outcome.turns:
        m = rec.message
        rows.append(
            {
                "turn_index": m.turn_index,
                "speaker": m.speaker,
                "body": m.body,
                "rating": None
                if rec.rating is None
                else {"value": rec.rating.value, "stance": rec.rating.stance.value},
                "routing": None
                if rec.routing is None
                else {"kind": rec.routing.kind, "agent_id": rec.routing.agent_id},
                "tool_calls": by_turn.get(m.turn_index, []),
            }
        )
    return rows


# -- run loops ----------------------------------------------------------------


def _turn_instruction(
    concept: str,
    model: EvaluationModel,
    criterion_id: str,
    state: DeliberationState,
    pool: ToolPool,
    repair_note: str | None,
) -> str:
    crit = model.criterion(criterion_id)
    agent = model.agent(state.speaker)
    lines = ["Product concept under evaluation:", concept.strip(), "", f"Criterion: {crit.display_name}."]
    if state.speaker == REPORT_GENERATOR_ID:
        lines.append("The discussion has ended. Write the criterion evaluation report now.")
        evo = rating_evolution(state.rating_history, crit.experts)
        for agent_id, values in evo.items():
            trail = " -> ".join(f"{v:g}" for v in values) or "no rating"
            lines.append(f"Ratings by {model.agent(agent_id).display_name}: {trail}")
    else:
        lines.append(f"It is your turn, {agent.display_name}.")
        budgets = [
            f"{t} {pool.remaining_budget(state.conversation_id, t, agent.id)}" for t in agent.tools
        ]
        if budgets:
            lines.append("Remaining tool uses: " + ", ".join(budgets) + ".")
    if repair_note:
        lines += ["", repair_note]
    return "\n".join(lines)


def run_criterion(
    concept: str,
    criterion_id: str,
    model: EvaluationModel,
    backend: ChatBackend,
    pool: ToolPool,
    store: MemoryStore,
    run: RunConfig,
    conversation_id: str | None = None,
    templates: Mapping[str, PromptTemplate] | None = None,
) -> CriterionOutcome:
    """Drive one criterion conversation to ``done`` or ``failed``."""
    crit = model.criterion(criterion_id)
    run.check_turn_cap(len(crit.experts))
    conversation_id = conversation_id or criterion_id
    deps = StepDeps.build(model, criterion_id, run)
    state = initial_state(conversation_id, criterion_id, crit.coordinator)
    repair_note: str | None = None
    base_query = f"{crit.display_name}: {crit.definition}"

    while not state.done:
        agent_id = state.speaker
        system_prompt, role_prompt = compose_prompts(model, agent_id, criterion_id, run, templates)
        last = state.turns[-1].message.body if state.turns else ""
        if agent_id == REPORT_GENERATOR_ID:
            context = build_context(store, agent_id, run.recent_window, max(run.retrieval_k, len(store.chat)), base_query)
        else:
            context = build_context(store, agent_id, run.recent_window, run.retrieval_k, f"{base_query}\n{last}")
        request = TurnRequest(
            agent_id=agent_id,
            system_prompt=system_prompt,
            role_prompt=role_prompt,
            context=context,
            instruction=_turn_instruction(concept, model, criterion_id, state, pool, repair_note),
            conversation_id=conversation_id,
        )
        try:
            completion = backend.complete(request)
        except BackendError as exc:
            log.warning("%s: backend failure: %s", conversation_id, exc)
            state = fail(state, f"backend: {exc}")
            break

        accepted_before = len(state.turns)
        state, commands = step(state, completion, deps)
        repair_note = None
        for cmd in commands:
            if isinstance(cmd, ToolCommand):
                call = pool.invoke(conversation_id, cmd.agent_id, cmd.tool_id, cmd.query, cmd.turn_index)
                if call.status == OK:
                    store.append(ToolSource(call.tool_id, call.call_id), call.result_text)
            else:
                repair_note = cmd.instruction
        if len(state.turns) > accepted_before:
            msg = state.turns[-1].message
            store.append(ChatSource(msg.speaker, msg.turn_index), msg.body)
        for v in state.violations[-3:]:
            log.debug("%s: %s", conversation_id, v)

    return outcome_from_state(state, crit.experts, pool.calls_for(conversation_id))


@dataclass(frozen=True)
class ConceptScorecard:
    concept_id: str
    title: str
    ratings: Mapping[str, float | None]
    outcomes: Mapping[str, CriterionOutcome]
    failures: Mapping[str, str] = field(default_factory=dict)

    @property
    def partial(self) -> bool:
        return any(v is None for v in self.ratings.values())


@dataclass
class EngineDeps:
    backend: ChatBackend
    tool_backend: ToolBackend
    templates: Mapping[str, PromptTemplate] | None = None
    embedder: Embedder | None = None


def conversation_key(concept_id: str, criterion_id: str) -> str:
    return f"{concept_id}/{criterion_id}"


def run_concept(
    concept: str,
    model: EvaluationModel,
    deps: EngineDeps,
    run: RunConfig,
    concept_id: str = "concept",
    title: str | None = None,
    jobs: int = 1,
    pool: ToolPool | None = None,
) -> ConceptScorecard:
    """Evaluate every criterion of ``model`` in its own conversation.

    Each criterion gets a fresh memory store and a fresh budget. With
    ``jobs > 1`` criteria run on a thread pool; results are assembled in
    model order either way. Shared tool memory (``memory_scope="concept"``)
    forces sequential execution so evidence order stays deterministic.
    """
    pool = pool or ToolPool(model, deps.tool_backend, run.tool_limits, run.tool_limit_scope)
    base = MemoryStore(deps.embedder, run.chunk_size, run.chunk_overlap)

    def store_for() -> MemoryStore:
        if run.memory_scope == "concept":
            return base.share_tools_with()
        return MemoryStore(deps.embedder, run.chunk_size, run.chunk_overlap)

    def one(criterion_id: str) -> CriterionOutcome:
        return run_criterion(
            concept,
            criterion_id,
            model,
            deps.backend,
            pool,
            store_for(),
            run,
            conversation_id=conversation_key(concept_id, criterion_id),
            templates=deps.templates,
        )

    ids = [c.id for c in model.criteria]
    if jobs > 1 and run.memory_scope == "criterion":
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            outcomes = list(ex.map(one, ids))
    else:
        outcomes = [one(i) for i in ids]

    ratings = {o.criterion_id: (o.final_rating if o.ok else None) for o in outcomes}
    failures = {o.criterion_id: o.failure_reason or "no rating" for o in outcomes if not o.ok}
    return ConceptScorecard(
        concept_id=concept_id,
        title=title or concept_id,
        ratings=ratings,
        outcomes={o.criterion_id: o for o in outcomes},
        failures=failures,
    )
