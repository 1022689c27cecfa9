"""Authoring helper for scripted deliberations.

Builds protocol-conformant conversations that converge on a chosen rating:
the first expert proposes an adjacent value, the second moves it to the
target, the rest agree, and the first expert closes by agreeing and routing
to the report generator. The bundled demo scenario and its tool-result
fixtures are generated this way and checked in.
"""

from __future__ import annotations

from typing import Any, Mapping, Sequence

from .evaluation_model import REPORT_GENERATOR_NAME, EvaluationModel
from .protocol import FINAL_ANSWER, Stance, format_rating

# Feature each concept's evidence searches revolve around.
CONCEPT_FOCUS = {
    "depthview_3d": "glasses-free parallax rendering",
    "precisioncad": "separate line-data geometry processing",
    "pixelmaster": "scheduled self-calibration",
}

# Search keyword and the angle experts argue from, per criterion.
CRITERION_ANGLE = {
    "patentability": ("prior art", "how crowded the surrounding prior art is"),
    "technical_viability": ("implementation", "whether current panels and controllers can deliver the feature"),
    "resource_requirement": ("development cost", "the engineering effort and component cost involved"),
    "value_proposition": ("user needs", "how directly the feature answers a stated user pain point"),
    "market_potential": ("market size", "the size and growth of the addressable segment"),
    "market_opportunity": ("competition", "how open the competitive window currently is"),
}

TOOL_FINDINGS = {
    "google_trends": "search interest for {focus} rose gradually over the past two years with no seasonal spikes",
    "google_patents": "{n} patent families mention {focus}; none claims the full combination described",
    "google_scholar": "{n} recent papers study {focus}; most report lab prototypes rather than shipping products",
    "google_search": "{n} vendor pages and reviews discuss {focus} with mixed views on cost",
    "reddit": "{n} community threads ask about {focus}; users mostly mention price and reliability",
}


def _query(title: str, criterion_id: str, who: str) -> str:
    keyword = CRITERION_ANGLE[criterion_id][0]
    return f"{title} {keyword} {who}".strip()


def _finding(tool_id: str, concept_id: str, criterion_id: str, turn: int) -> str:
    n = 3 + (len(concept_id) + len(criterion_id) + turn) % 7
    focus = CONCEPT_FOCUS.get(concept_id, "the core feature")
    return TOOL_FINDINGS[tool_id].format(focus=focus, n=n).capitalize() + "."


def opening_value(target: float, index: int, step: float = 0.5, lo: float = 0.0, hi: float = 10.0) -> float:
    """Adjacent grid value the first expert proposes before being revised."""
    up = target + step
    down = target - step
    if index % 2 == 0:
        return up if up <= hi else down
    return down if down >= lo else up


def build_conversation(
    model: EvaluationModel,
    concept_id: str,
    title: str,
    criterion_id: str,
    target: float,
    index: int = 0,
) -> tuple[list[dict[str, str]], list[dict[str, str]]]:
    """Turns and the tool fixtures they need for one criterion conversation."""
    crit = model.criterion(criterion_id)
    coord = model.agent(crit.coordinator)
    experts = [model.agent(e) for e in crit.experts]
    angle = CRITERION_ANGLE[criterion_id][1]
    focus = CONCEPT_FOCUS.get(concept_id, "the core feature")
    turns: list[dict[str, str]] = []
    tools: list[dict[str, str]] = []

    def call(agent, turn: int) -> str:
        tool_id = agent.tools[0]
        q = _query(title, criterion_id, agent.display_name.lower())
        tools.append({"tool": tool_id, "query": q, "result": _finding(tool_id, concept_id, criterion_id, turn)})
        return f"CALL {tool_id}: {q}"

    opener = experts[0]
    turns.append({
        "agent": coord.id,
        "text": "\n".join([
            call(coord, 0),
            f"Early signals on {focus} are the starting point for judging {crit.display_name.lower()}. "
            f"Useful search terms are \"{focus}\" and \"{title} {CRITERION_ANGLE[criterion_id][0]}\". "
            f"{opener.display_name} should open the assessment.",
            opener.display_name,
        ]),
    })

    first = opening_value(target, index)
    sequence: list[tuple[Any, Stance, float, str]] = [
        (experts[0], Stance.PROPOSE, first, experts[1].display_name),
        (experts[1], Stance.SUGGEST_REVISION, target,
         (experts[2] if len(experts) > 2 else experts[0]).display_name),
    ]
    for e in experts[2:]:
        sequence.append((e, Stance.AGREE, target, experts[0].display_name))
    sequence.append((experts[0], Stance.AGREE, target, REPORT_GENERATOR_NAME))

    for turn, (agent, stance, value, route) in enumerate(sequence, start=1):
        if stance is Stance.PROPOSE:
            body = (f"My reading focuses on {angle}. The evidence on {focus} is encouraging but incomplete. "
                    f"{format_rating(stance, value)}")
        elif stance is Stance.SUGGEST_REVISION:
            body = (f"The retrieved evidence shifts the picture on {angle}. "
                    f"The earlier rating does not reflect what the sources show. {format_rating(stance, value)}")
        else:
            body = (f"The latest evidence is consistent with the revised view on {angle}. "
                    f"{format_rating(stance, value)} because my own search points the same way.")
        turns.append({"agent": agent.id, "text": "\n".join([call(agent, turn), body, route])})

    evolution = {e.id: [] for e in experts}
    for agent, _, value, _ in sequence:
        evolution[agent.id].append(value)
    report = ["## Consensus Summary",
              f"The panel agreed on {target:g}/10 for {crit.display_name} of {title}.",
              ""]
    for e in experts:
        vals = evolution[e.id]
        report += [f"## {e.display_name} Insights",
                   f"{e.display_name} assessed {angle} and settled on {vals[-1]:g}/10.", ""]
    report += ["## Key Rating Factors", f"- Evidence on {focus}", f"- {angle.capitalize()}", "",
               "## Rating Evolution"]
    for e in experts:
        report.append(f"- {e.display_name}: " + " -> ".join(f"{v:g}" for v in evolution[e.id]))
    report += ["", FINAL_ANSWER]
    turns.append({"agent": "report_generator", "text": "\n".join(report)})
    return turns, tools


def build_demo_documents(
    model: EvaluationModel,
    concepts: Sequence[tuple[str, str]],
    targets: Mapping[str, Mapping[str, float]],
) -> tuple[dict[str, Any], dict[str, Any]]:
    """Scenario document and tool fixture document for every (concept, criterion)."""
    conversations: dict[str, Any] = {}
    fixtures: list[dict[str, str]] = []
    seen: set[tuple[str, str]] = set()
    for concept_id, title in concepts:
        for i, crit in enumerate(model.criteria):
            turns, tools = build_conversation(model, concept_id, title, crit.id, float(targets[concept_id][crit.id]), i)
            conversations[f"{concept_id}/{crit.id}"] = turns
            for rec in tools:
                key = (rec["tool"], rec["query"].lower())
                if key not in seen:
                    seen.add(key)
                    fixtures.append(rec)
    return {"conversations": conversations}, {"fixtures": fixtures}
