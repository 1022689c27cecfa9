"""Transcript protocol: ratings, routing lines, tool requests and notices,
sentence limits, and consensus detection.

Everything here is a pure function over text or immutable records. The
grammar is written out in docs/protocol.md.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import Iterable, Mapping, NamedTuple, Sequence

from .errors import MalformedRoutingError, ProtocolViolation
from .evaluation_model import REPORT_GENERATOR_ID, REPORT_GENERATOR_NAME, RatingScale

FINAL_ANSWER = "FINAL_ANSWER"


class Stance(str, enum.Enum):
    PROPOSE = "propose"
    SUGGEST_REVISION = "suggest_revision"
    AGREE = "agree"


RATING_PHRASES = {
    Stance.PROPOSE: "I rate this concept {value}/10.",
    Stance.SUGGEST_REVISION: "I suggest a rating of {value}/10.",
    Stance.AGREE: "I agree with the current rating of {value}/10",
}

_NUM = r"(-?\d+(?:\.\d+)?)"
_RATING_RE = re.compile(
    rf"I\s+rate\s+this\s+concept\s+\[?{_NUM}\]?\s*/\s*10"
    rf"|I\s+suggest\s+a\s+rating\s+of\s+\[?{_NUM}\]?\s*/\s*10"
    rf"|I\s+agree\s+with\s+the\s+current\s+rating\s+of\s+\[?{_NUM}\]?\s*/\s*10",
    re.IGNORECASE,
)
_STANCE_BY_GROUP = (Stance.PROPOSE, Stance.SUGGEST_REVISION, Stance.AGREE)

_NOTICE_RE = re.compile(r"Tool\s+limit\s+reached\s+for\s+['\"`]?([A-Za-z0-9_\-]+)", re.IGNORECASE)
_CALL_RE = re.compile(r"^\s*CALL\s+([A-Za-z0-9_\-]+)\s*:\s*(.+?)\s*$", re.MULTILINE)
_SENTENCE_END_RE = re.compile(r"[.!?]+(?=\s|$)")


class ParsedRating(NamedTuple):
    value: float
    stance: Stance


@dataclass(frozen=True)
class Message:
    speaker: str
    turn_index: int
    body: str


@dataclass(frozen=True)
class RatingEvent:
    speaker: str
    turn_index: int
    value: float
    stance: Stance


@dataclass(frozen=True)
class RoutingDirective:
    kind: str  # "next_expert" | "report_generator"
    agent_id: str = REPORT_GENERATOR_ID

    @classmethod
    def to_expert(cls, agent_id: str) -> "RoutingDirective":
        return cls("next_expert", agent_id)

    @classmethod
    def to_report(cls) -> "RoutingDirective":
        return cls("report_generator", REPORT_GENERATOR_ID)


@dataclass(frozen=True)
class ToolLimitNotice:
    tool_id: str


@dataclass(frozen=True)
class ToolRequest:
    tool_id: str
    query: str


@dataclass(frozen=True)
class ConsensusStatus:
    reached: bool
    value: float | None
    holdouts: tuple[str, ...]


def format_rating(stance: Stance | str, value: float) -> str:
    return RATING_PHRASES[Stance(stance)].format(value=f"{value:g}")


def parse_rating(body: str, scale: RatingScale | None = None) -> ParsedRating | None:
    """Last rating phrase in ``body``, or None.

    Off-scale values raise :class:`ProtocolViolation` carrying the value;
    off-grid values are returned as written (callers snap and flag them).
    """
    scale = scale or RatingScale()
    last = None
    for last in _RATING_RE.finditer(body):
        pass
    if last is None:
        return None
    for idx, stance in enumerate(_STANCE_BY_GROUP, start=1):
        raw = last.group(idx)
        if raw is not None:
            value = float(raw)
            if not scale.contains(value):
                raise ProtocolViolation(f"rating {raw}/10 is outside [{scale.min:g}, {scale.max:g}]", value)
            return ParsedRating(value, stance)
    raise AssertionError("unreachable")


def normalize_name(name: str) -> str:
    return " ".join(name.replace("_", " ").split()).casefold()


def last_line(body: str) -> str:
    lines = [ln.strip() for ln in body.splitlines() if ln.strip()]
    return lines[-1] if lines else ""


def routing_names(participants: Mapping[str, str], include_report: bool = True) -> dict[str, str]:
    """id -> display-name table for parse_routing, optionally with the report sentinel."""
    names = dict(participants)
    if include_report:
        names[REPORT_GENERATOR_ID] = REPORT_GENERATOR_NAME
    return names


def parse_routing(body: str, known_names: Mapping[str, str] | Iterable[str]) -> RoutingDirective:
    """Match the final non-empty line against participant ids and display names.

    ``known_names`` maps agent id to display name (a plain iterable of ids is
    also accepted). Matching ignores case, underscores vs. spaces, repeated
    whitespace, and wrapping quotes or emphasis markers.
    """
    if not isinstance(known_names, Mapping):
        known_names = {n: n for n in known_names}
    line = last_line(body)
    candidate = normalize_name(line.strip("*_'\"` "))
    for agent_id, display in known_names.items():
        if candidate in (normalize_name(agent_id), normalize_name(display)):
            if agent_id == REPORT_GENERATOR_ID:
                return RoutingDirective.to_report()
            return RoutingDirective.to_expert(agent_id)
    raise MalformedRoutingError(line)


def parse_tool_notice(body: str, known_tools: Mapping[str, str] | Iterable[str]) -> ToolLimitNotice | None:
    m = _NOTICE_RE.search(body)
    if m is None:
        return None
    if not isinstance(known_tools, Mapping):
        known_tools = {t: t for t in known_tools}
    wanted = normalize_name(m.group(1))
    for tool_id, display in known_tools.items():
        if wanted in (normalize_name(tool_id), normalize_name(display)):
            return ToolLimitNotice(tool_id)
    raise ProtocolViolation(f"tool limit notice names unknown tool {m.group(1)!r}", m.group(1))


def parse_tool_requests(body: str) -> list[ToolRequest]:
    """``CALL <tool_id>: <query>`` lines, in order of appearance."""
    return [ToolRequest(m.group(1), m.group(2)) for m in _CALL_RE.finditer(body)]


def strip_protocol_lines(body: str) -> str:
    """Body without CALL lines; used for sentence counting and display."""
    return _CALL_RE.sub("", body).strip()


def count_sentences(body: str) -> int:
    """Terminator-delimited sentences, ignoring CALL lines and a trailing routing line.

    A final line with no terminator in a multi-line message is taken to be
    the routing line. Decimal points never end a sentence.
    """
    lines = [ln for ln in strip_protocol_lines(body).splitlines() if ln.strip()]
    if len(lines) > 1 and not _SENTENCE_END_RE.search(lines[-1]):
        lines = lines[:-1]
    text = " ".join(lines)
    return sum(1 for piece in _SENTENCE_END_RE.split(text) if piece.strip())


def sentence_limit_exceeded(body: str, limit: int | None) -> bool:
    return limit is not None and count_sentences(body) > limit


def ends_with_final_answer(body: str) -> bool:
    return last_line(body) == FINAL_ANSWER


def detect_consensus(history: Sequence[RatingEvent], experts: Sequence[str]) -> ConsensusStatus:
    """Every expert's latest rating must equal the most recent rating in ``history``."""
    if not history:
        return ConsensusStatus(False, None, tuple(experts))
    current = history[-1].value
    latest: dict[str, RatingEvent] = {}
    for ev in history:
        latest[ev.speaker] = ev
    holdouts = tuple(
        e for e in experts if e not in latest or latest[e].value != current
    )
    if holdouts:
        return ConsensusStatus(False, current, holdouts)
    return ConsensusStatus(True, current, ())
