"""Four-layer prompt rendering with strict placeholder accounting.

Placeholders are uppercase tokens in square brackets or braces, e.g.
``[CRITERIA]``, ``{TOOL_NAMES}``, ``[CURRENT DATE]``.  A comma-separated run
``[STEM_1], [STEM_2], ..., [STEM_N]`` is a list slot: binding ``STEM_N`` to a
sequence expands the whole run.  Tokens listed in a template's ``literals``
are addressed to the model (``[X]``, ``[BRIEF REASON]``) and pass through
untouched.  See docs/prompt-grammar.md.
"""

from __future__ import annotations

import logging
import re
import warnings
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

from .errors import MalformedTokenError, MissingBindingError, TemplateError
from .evaluation_model import (
    REPORT_GENERATOR_ID,
    REPORT_GENERATOR_NAME,
    EvaluationModel,
    role_in,
)
from .run_config import RunConfig

log = logging.getLogger(__name__)

LAYERS = ("system", "coordinator", "expert", "report_generator")

MODEL_FACING_TOKENS = frozenset({"X", "BRIEF REASON", "BRIEF REASON BASED ON DOMAIN EXPERTISE"})

REPORT_SENTINEL = REPORT_GENERATOR_NAME
FINAL_SENTINEL = "FINAL_ANSWER"

_NAME = r"[A-Z0-9][A-Z0-9 _&\-]*"
_TOKEN_RE = re.compile(rf"\[({_NAME})\]|\{{({_NAME})\}}")
_LIST_RUN_RE = re.compile(r"\[([A-Z][A-Z0-9 ]*?)_1\](?:, \[\1_\d+\])*, \[\1_N\]")
_RENDER_RE = re.compile(
    rf"(?P<run>\[(?P<stem>[A-Z][A-Z0-9 ]*?)_1\](?:, \[(?P=stem)_\d+\])*, \[(?P=stem)_N\])"
    rf"|\[({_NAME})\]|\{{({_NAME})\}}"
)


class UnusedBindingWarning(UserWarning):
    pass


class PromptLengthWarning(UserWarning):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    layer: str
    body: str
    literals: frozenset[str] = MODEL_FACING_TOKENS

    def __post_init__(self) -> None:
        if self.layer not in LAYERS:
            raise TemplateError(f"unknown layer {self.layer!r}")
        if not self.body.strip():
            raise TemplateError(f"{self.layer} template body is empty")
        _check_balanced(self.body)


def _check_balanced(body: str) -> None:
    pairs = {"[": "]", "{": "}"}
    for lineno, line in enumerate(body.splitlines(), 1):
        stack: list[str] = []
        for ch in line:
            if ch in pairs:
                if stack:
                    raise MalformedTokenError(f"line {lineno}: nested {ch!r} in {line.strip()!r}")
                stack.append(ch)
            elif ch in ("]", "}"):
                if not stack or pairs[stack.pop()] != ch:
                    raise MalformedTokenError(f"line {lineno}: unmatched {ch!r} in {line.strip()!r}")
        if stack:
            raise MalformedTokenError(f"line {lineno}: unclosed {stack[-1]!r} in {line.strip()!r}")


def _token_name(match: re.Match[str]) -> str:
    return match.group(1) or match.group(2)


def extract_placeholders(template: PromptTemplate | str) -> set[str]:
    """Distinct engine-filled tokens in the template body."""
    if isinstance(template, str):
        _check_balanced(template)
        body, literals = template, MODEL_FACING_TOKENS
    else:
        body, literals = template.body, template.literals
    return {_token_name(m) for m in _TOKEN_RE.finditer(body)} - literals


def _ordered_tokens(body: str, literals: frozenset[str]) -> list[str]:
    seen: list[str] = []
    for m in _TOKEN_RE.finditer(body):
        name = _token_name(m)
        if name not in literals and name not in seen:
            seen.append(name)
    return seen


def render(template: PromptTemplate | str, bindings: Mapping[str, str | Sequence[str]]) -> str:
    """Substitute every engine-filled token in a single pass.

    Binding values are never re-scanned, so a value that itself contains
    ``[TOKEN]`` text is emitted verbatim.
    """
    if isinstance(template, str):
        template = PromptTemplate("system", template)
    body, literals = template.body, template.literals

    list_stems = {m.group(1) for m in _LIST_RUN_RE.finditer(body)}
    covered: set[str] = set()
    for stem in list_stems:
        value = bindings.get(f"{stem}_N")
        if value is not None and not isinstance(value, str):
            covered.update(t for t in _ordered_tokens(body, literals) if t.startswith(f"{stem}_"))

    for token in _ordered_tokens(body, literals):
        if token in covered:
            continue
        value = bindings.get(token)
        if value is None or not isinstance(value, str):
            raise MissingBindingError(token)

    used = extract_placeholders(template) | {f"{stem}_N" for stem in list_stems}
    unused = sorted(set(bindings) - used)
    if unused:
        warnings.warn(f"unused bindings: {', '.join(unused)}", UnusedBindingWarning, stacklevel=2)

    def fill(m: re.Match[str]) -> str:
        if m.group("run") is not None:
            value = bindings.get(f"{m.group('stem')}_N")
            if value is not None and not isinstance(value, str):
                return ", ".join(value)
            return _TOKEN_RE.sub(fill_token, m.group("run"))
        return fill_token(m)

    def fill_token(m: re.Match[str]) -> str:
        name = next(g for g in m.groups()[-2:] if g)
        if name in literals:
            return m.group(0)
        return str(bindings[name])

    return _RENDER_RE.sub(fill, body)


def unreplaced_tokens(text: str, literals: frozenset[str] = MODEL_FACING_TOKENS) -> set[str]:
    """Engine-fillable tokens still present in rendered text (should be empty)."""
    return {_token_name(m) for m in _TOKEN_RE.finditer(text)} - literals


# -- template files -----------------------------------------------------------


def load_template(layer: str, directory: str | Path | None = None) -> PromptTemplate:
    if layer not in LAYERS:
        raise TemplateError(f"unknown layer {layer!r}")
    if directory is None:
        text = resources.files("delib").joinpath("prompts").joinpath(f"{layer}.txt").read_text(encoding="utf-8")
    else:
        text = Path(directory, f"{layer}.txt").read_text(encoding="utf-8")
    tpl = PromptTemplate(layer, text)
    if layer in ("coordinator", "expert") and "CURRENT DATE" not in extract_placeholders(tpl):
        raise TemplateError(f"{layer} template must contain [CURRENT DATE]")
    return tpl


def load_templates(directory: str | Path | None = None) -> dict[str, PromptTemplate]:
    return {layer: load_template(layer, directory) for layer in LAYERS}


_DEFAULT_TEMPLATES: dict[str, PromptTemplate] | None = None


def default_templates() -> dict[str, PromptTemplate]:
    global _DEFAULT_TEMPLATES
    if _DEFAULT_TEMPLATES is None:
        _DEFAULT_TEMPLATES = load_templates()
    return _DEFAULT_TEMPLATES


# -- composition --------------------------------------------------------------


def _sentence_case(text: str) -> str:
    if len(text) > 1 and text[0].isupper() and text[1].islower():
        return text[0].lower() + text[1:]
    return text


def _tool_limit_text(tools: Sequence[str], model: EvaluationModel, run: RunConfig) -> str:
    limits = [run.tool_limits.get(t, model.tool(t).default_limit) for t in tools]
    if not limits:
        return "0"
    if len(set(limits)) == 1:
        return str(limits[0])
    return " / ".join(f"{n} ({t})" for t, n in zip(tools, limits))


def compose_prompts(
    model: EvaluationModel,
    agent_id: str,
    criterion_id: str,
    run: RunConfig | None,
    templates: Mapping[str, PromptTemplate] | None = None,
) -> tuple[str, str]:
    """Render the system layer and the role layer for one participant."""
    role = role_in(model, agent_id, criterion_id)
    if run is None or getattr(run, "current_date", None) is None:
        raise TemplateError("run config must state the current date")
    templates = templates or default_templates()

    crit = model.criterion(criterion_id)
    dim = model.dimension(crit.dimension)
    agent = model.agent(agent_id)
    coordinator = model.agent(crit.coordinator)
    experts = [model.agent(e) for e in crit.experts]

    feasibility = dim.display_name + (f" ({dim.description})" if dim.description else "")
    shared = {
        "CRITERIA": crit.display_name,
        "CRITERIA DESCRIPTION": _sentence_case(crit.definition),
    }
    system_bindings = {
        **shared,
        "TOOL_NAMES": ", ".join(agent.tools) or "none",
        "FEASIBILITY & DESCRIPTION": feasibility,
    }

    tool_name = " or ".join(agent.tools) or "none"
    sources = ", ".join(s.lower() for s in agent.data_sources) or "relevant evidence"
    if role == "coordinator":
        role_bindings = {
            **shared,
            "COORDINATOR ROLE": agent.display_name,
            "N": str(agent.max_sentences or 3),
            "CURRENT DATE": run.current_date.isoformat(),
            "TOOL_NAME": tool_name,
            "RESEARCH DOMAINS": sources,
            "TOOL_LIMIT": _tool_limit_text(agent.tools, model, run),
            "EXPERT_N": [e.display_name for e in experts],
        }
    elif role == "expert":
        others = [e.display_name for e in experts if e.id != agent_id]
        role_bindings = {
            **shared,
            "AGENT ROLE": agent.display_name,
            "N": str(agent.max_sentences or 4),
            "CURRENT DATE": run.current_date.isoformat(),
            "TOOL_NAME": tool_name,
            "TOOL PURPOSE": f"gather {sources} evidence",
            "COORDINATOR AGENT": coordinator.display_name,
            "TOOL_LIMIT": _tool_limit_text(agent.tools, model, run),
            "REPORT_SENTINEL": REPORT_SENTINEL,
            "AGENT_N": others or [agent.display_name],
        }
    else:
        role_bindings = {
            **shared,
            "REPORT GENERATOR ROLE": "Report Generator",
            "SECTION_N": report_sections(model, criterion_id),
            "FINAL_SENTINEL": FINAL_SENTINEL,
        }

    system_tpl = templates["system"]
    role_tpl = templates[role]
    system_prompt = render(system_tpl, _only_used(system_tpl, system_bindings))
    role_prompt = render(role_tpl, _only_used(role_tpl, role_bindings))

    total = len(system_prompt) + len(role_prompt)
    if total > run.prompt_char_budget:
        msg = (
            f"prompt for {agent_id}/{criterion_id} is {total} chars, "
            f"over the {run.prompt_char_budget}-char budget"
        )
        log.warning(msg)
        warnings.warn(msg, PromptLengthWarning, stacklevel=2)
    return system_prompt, role_prompt


def report_sections(model: EvaluationModel, criterion_id: str) -> list[str]:
    crit = model.criterion(criterion_id)
    return (
        ["Consensus Summary"]
        + [f"{model.agent(e).display_name} Insights" for e in crit.experts]
        + ["Key Rating Factors"]
    )


def _only_used(template: PromptTemplate, bindings: dict[str, object]) -> dict[str, object]:
    used = extract_placeholders(template)
    stems = {m.group(1) for m in _LIST_RUN_RE.finditer(template.body)}
    return {k: v for k, v in bindings.items() if k in used or k.removesuffix("_N") in stems}


__all__ = [
    "FINAL_SENTINEL",
    "LAYERS",
    "MODEL_FACING_TOKENS",
    "PromptLengthWarning",
    "PromptTemplate",
    "REPORT_GENERATOR_ID",
    "REPORT_SENTINEL",
    "UnusedBindingWarning",
    "compose_prompts",
    "default_templates",
    "extract_placeholders",
    "load_template",
    "load_templates",
    "render",
    "report_sections",
    "unreplaced_tokens",
]
