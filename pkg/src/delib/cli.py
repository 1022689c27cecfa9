"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 invalid input or usage. Errors go
to stderr as ``delib:error:<kind>: <message>``.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import os
import re
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import yaml

from . import errors
from .backends import LiveBackend, SessionRecorder, read_session, scripted_from
from .evaluation_model import EvaluationModel, load_model, serialize_model
from .finetune import build_finetune_records, read_ratings_table
from .orchestrator import ConceptScorecard, EngineDeps, run_concept, transcript_records
from .prompt_engine import compose_prompts
from .run_config import RunConfig
from .scoring import (
    PrintedFigures,
    aggregate,
    compare,
    comparison_to_dict,
    format_comparison,
    rank,
    read_rating_sheet,
    render_criterion_markdown,
    render_report,
    report_data,
    scorecard_to_dict,
    to_decimal,
)
from .tools import FixtureBackend, HttpToolBackend, ToolBackend, ToolPool, fixtures_from_audit, load_fixtures

log = logging.getLogger("delib")

DEMO_DATE = dt.date(2025, 10, 1)
SESSION_FORMAT = 1

# Errors caused by bad input rather than a failed run.
_INPUT_ERRORS = (
    errors.ModelError,
    errors.TemplateError,
    errors.ScenarioFormatError,
    errors.FixtureFormatError,
    errors.FinetuneDataError,
    errors.ScoringError,
    errors.FixtureError,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _kind(exc: BaseException) -> str:
    return re.sub(r"(?<!^)(?=[A-Z])", "_", type(exc).__name__).lower()


def _fail(kind: str, message: str, code: int) -> int:
    print(f"delib:error:{kind}: {message}", file=sys.stderr)
    return code


# -- shared plumbing ----------------------------------------------------------


@dataclass(frozen=True)
class ConceptInput:
    concept_id: str
    title: str
    description: str

    def to_dict(self) -> dict[str, str]:
        return {"id": self.concept_id, "title": self.title, "description": self.description}


def read_concepts(path: str | Path) -> list[ConceptInput]:
    """A plain-text description, or YAML/JSON ``{concepts: [{id, title, description}]}``."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix in (".yaml", ".yml", ".json"):
        doc = yaml.safe_load(text)
        items = doc.get("concepts") if isinstance(doc, dict) else doc
        if not isinstance(items, list) or not items:
            raise errors.SchemaError(f"{path}: expected a non-empty 'concepts' list")
        out = []
        for i, c in enumerate(items):
            if not isinstance(c, dict) or not c.get("description"):
                raise errors.SchemaError(f"{path}: concept #{i} needs a description")
            cid = str(c.get("id") or f"{path.stem}_{i}")
            out.append(ConceptInput(cid, str(c.get("title") or cid), str(c["description"]).strip()))
        return out
    if not text.strip():
        raise errors.SchemaError(f"{path}: concept description is empty")
    return [ConceptInput(path.stem, path.stem, text.strip())]


def _tool_backend(spec: str | None) -> ToolBackend:
    if not spec:
        return FixtureBackend({})
    if spec.startswith("live:"):
        endpoints = yaml.safe_load(Path(spec[5:]).read_text(encoding="utf-8"))
        if not isinstance(endpoints, dict):
            raise errors.SchemaError("live tool config must map tool id to endpoint URL")
        return HttpToolBackend(endpoints)
    return load_fixtures(Path(spec))


def _chat_backend(spec: str):
    if spec == "live":
        return LiveBackend.from_env()
    if spec.startswith("scripted:"):
        path = Path(spec[len("scripted:"):])
        if not path.exists():
            raise errors.ScenarioFormatError(f"scenario {path} does not exist")
        return scripted_from(path)
    raise UsageError(f"--backend must be 'live' or 'scripted:<scenario>', not {spec!r}")


def _run_config(path: str | None, date: str | None, max_turns: int | None) -> RunConfig:
    data: dict[str, Any] = {}
    if path:
        loaded = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        if not isinstance(loaded, dict):
            raise errors.SchemaError("run config must be a mapping")
        data.update(loaded)
    if date:
        data["current_date"] = date
    if max_turns:
        data["max_turns"] = max_turns
    if "current_date" not in data:
        raise errors.SchemaError("the evaluation date is required: pass --date or set current_date")
    try:
        return RunConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise errors.SchemaError(f"bad run config: {exc}") from exc


def default_jobs() -> int:
    return max(1, min(6, os.cpu_count() or 1))


def evaluate_concepts(
    concepts: Sequence[ConceptInput],
    model: EvaluationModel,
    backend,
    tools: ToolBackend,
    run: RunConfig,
    jobs: int,
) -> tuple[list[ConceptScorecard], ToolPool]:
    pool = ToolPool(model, tools, run.tool_limits, run.tool_limit_scope)
    deps = EngineDeps(backend, tools)
    cards = [
        run_concept(c.description, model, deps, run, concept_id=c.concept_id, title=c.title, jobs=jobs, pool=pool)
        for c in concepts
    ]
    return cards, pool


def write_outputs(
    out: Path,
    cards: Sequence[ConceptScorecard],
    model: EvaluationModel,
    recorder: SessionRecorder,
    header: dict[str, Any],
    pool: ToolPool,
) -> dict[str, Any]:
    """Fixed layout: transcripts/, reports/, scorecard.json, session.jsonl, tool_audit.jsonl."""
    out.mkdir(parents=True, exist_ok=True)
    complete = {c.concept_id: c for c in cards if not c.partial}
    ranking = rank({cid: aggregate(c) for cid, c in complete.items()}) if complete else []
    labels = {r.concept_id: r.label for r in ranking}
    order = []
    for card in cards:
        tdir = out / "transcripts" / card.concept_id
        rdir = out / "reports" / card.concept_id
        tdir.mkdir(parents=True, exist_ok=True)
        rdir.mkdir(parents=True, exist_ok=True)
        data = report_data(card, model, labels.get(card.concept_id))
        for outcome, cdata in zip(card.outcomes.values(), data.criteria):
            order.append(outcome.conversation_id)
            with open(tdir / f"{outcome.criterion_id}.jsonl", "w", encoding="utf-8") as fh:
                for row in transcript_records(outcome):
                    fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")
            (rdir / f"{outcome.criterion_id}.md").write_text(
                render_criterion_markdown(cdata, card.title), encoding="utf-8"
            )
        (out / "reports" / f"{card.concept_id}.md").write_text(
            render_report(card, "markdown", model, labels.get(card.concept_id)), encoding="utf-8"
        )
        (out / "reports" / f"{card.concept_id}.json").write_text(
            render_report(card, "structured", model, labels.get(card.concept_id)), encoding="utf-8"
        )
    summary = scorecard_to_dict(cards, ranking)
    (out / "scorecard.json").write_text(json.dumps(summary, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    with open(out / "tool_audit.jsonl", "w", encoding="utf-8") as fh:
        for key in order:
            for call in pool.calls_for(key):
                fh.write(json.dumps(call.to_record(), sort_keys=True, ensure_ascii=False) + "\n")
    header = dict(header)
    header["tool_fixtures"] = fixtures_from_audit(c for key in order for c in pool.calls_for(key))
    recorder.write(out / "session.jsonl", header, order)
    return summary


def _session_header(model: EvaluationModel, concepts: Sequence[ConceptInput], run: RunConfig) -> dict[str, Any]:
    return {
        "format": SESSION_FORMAT,
        "model": serialize_model(model),
        "concepts": [c.to_dict() for c in concepts],
        "run_config": run.to_dict(),
    }


def _print_summary(summary: dict[str, Any], titles: dict[str, str]) -> None:
    for c in summary["concepts"]:
        agg = c["aggregate"] if c["aggregate"] is not None else "partial"
        print(f"{c['title']}: {agg}")
        for crit, reason in c["failures"].items():
            print(f"  {crit}: failed ({reason})")
    if summary["ranking"]:
        print("ranking: " + " ".join(f"{i}. {titles[cid]}" for i, cid in enumerate(summary["ranking"], 1)))


# -- subcommands --------------------------------------------------------------


def cmd_validate(args: argparse.Namespace) -> int:
    model = load_model(Path(args.model_config))
    run = RunConfig(current_date=dt.date.today())
    for crit in model.criteria:
        run.check_turn_cap(len(crit.experts))
        for agent_id in (crit.coordinator, *crit.experts, "report_generator"):
            compose_prompts(model, agent_id, crit.id, run)
    print(
        f"ok: {len(model.dimensions)} dimensions, {len(model.criteria)} criteria, "
        f"{len(model.agents)} agents, {len(model.tool_specs)} tools"
    )
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    model = load_model(Path(args.model))
    concepts = [c for path in args.concept for c in read_concepts(path)]
    if len({c.concept_id for c in concepts}) != len(concepts):
        raise errors.SchemaError("concept ids must be unique across --concept inputs")
    run = _run_config(args.run_config, args.date, args.max_turns)
    backend = SessionRecorder(_chat_backend(args.backend))
    tools = _tool_backend(args.tools)
    cards, pool = evaluate_concepts(concepts, model, backend, tools, run, args.jobs)
    summary = write_outputs(Path(args.out), cards, model, backend, _session_header(model, concepts, run), pool)
    _print_summary(summary, {c.concept_id: c.title for c in concepts})
    return 1 if any(c.partial for c in cards) else 0


def cmd_replay(args: argparse.Namespace) -> int:
    header, _ = read_session(args.session)
    if header.get("format") != SESSION_FORMAT:
        raise errors.ScenarioFormatError(f"{args.session}: not a session record (missing or unknown header)")
    model = load_model(header["model"])
    concepts = [ConceptInput(c["id"], c["title"], c["description"]) for c in header["concepts"]]
    run = RunConfig.from_dict(header["run_config"])
    tools = load_fixtures(header.get("tool_fixtures") or [], strict=True)
    backend = SessionRecorder(scripted_from(Path(args.session), verify_digests=args.verify))
    cards, pool = evaluate_concepts(concepts, model, backend, tools, run, args.jobs)
    summary = write_outputs(Path(args.out), cards, model, backend, _session_header(model, concepts, run), pool)
    _print_summary(summary, {c.concept_id: c.title for c in concepts})
    return 1 if any(c.partial for c in cards) else 0


def _printed_figures(path: str | None) -> PrintedFigures | None:
    if not path:
        return None
    doc = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}

    def dec(key: str) -> dict:
        return {k: to_decimal(v) for k, v in (doc.get(key) or {}).items()}

    mean = doc.get("mean_delta")
    return PrintedFigures(dec("system_total"), dec("expert_total"), dec("delta"),
                          None if mean is None else to_decimal(mean))


def cmd_compare(args: argparse.Namespace) -> int:
    from .evaluation_model import default_model
    from .fixtures import concept_titles

    system = read_rating_sheet(Path(args.system))
    expert = read_rating_sheet(Path(args.expert))
    report = compare(system, expert, _printed_figures(args.printed))
    if args.format == "json":
        print(json.dumps(comparison_to_dict(report), indent=2))
    else:
        model = default_model()
        names = {c.id: c.display_name for c in model.criteria}
        print(format_comparison(report, expert.raters(), concept_titles(), names), end="")
    return 0


def cmd_finetune_prep(args: argparse.Namespace) -> int:
    table = read_ratings_table(Path(args.ratings))
    batch = build_finetune_records(table, args.dimension, single_metric=args.single_metric)
    batch.write(args.out)
    print(f"wrote {len(batch.records)} records to {args.out}; skipped {batch.skipped} rows; snapped {batch.snapped} labels")
    if batch.skipped:
        print(f"skipped rows (0-based): {', '.join(map(str, batch.skipped_rows))}", file=sys.stderr)
    return 0


def run_demo(out: Path, jobs: int = 1) -> dict[str, Any]:
    """Evaluate the three bundled concepts with the bundled script and tool results."""
    from .evaluation_model import default_model
    from .fixtures import load_fixture_set

    model = default_model()
    concepts = [ConceptInput(c.concept_id, c.title, c.description) for c in load_fixture_set("concepts")]
    run = RunConfig(current_date=DEMO_DATE)
    backend = SessionRecorder(load_fixture_set("demo_scenario").backend())
    tools = load_fixture_set("tool_results")
    cards, pool = evaluate_concepts(concepts, model, backend, tools, run, jobs)
    return write_outputs(out, cards, model, backend, _session_header(model, concepts, run), pool)


def cmd_demo(args: argparse.Namespace) -> int:
    out = Path(args.out) if args.out else Path(tempfile.mkdtemp(prefix="delib-demo-"))
    summary = run_demo(out, args.jobs)
    titles = {c["concept_id"]: c["title"] for c in summary["concepts"]}
    _print_summary(summary, titles)
    print(f"reports: {out / 'reports'}")
    return 0


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="delib", description="Multi-agent product concept evaluation.")
    p.add_argument("-v", "--verbose", action="store_true", help="log protocol advisories")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    v = sub.add_parser("validate", help="check an evaluation model config")
    v.add_argument("model_config")
    v.set_defaults(func=cmd_validate)

    e = sub.add_parser("evaluate", help="evaluate concepts and write transcripts, reports and a scorecard")
    e.add_argument("--model", required=True)
    e.add_argument("--concept", required=True, action="append", help="text file or YAML concept list (repeatable)")
    e.add_argument("--backend", required=True, help="'live' or 'scripted:<scenario file>'")
    e.add_argument("--out", required=True)
    e.add_argument("--tools", help="tool fixture file, or live:<endpoints.yaml>")
    e.add_argument("--run-config", help="YAML run settings")
    e.add_argument("--date", help="evaluation date, YYYY-MM-DD")
    e.add_argument("--max-turns", type=int)
    e.add_argument("--jobs", type=int, default=default_jobs())
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("replay", help="re-run an evaluation from its session record")
    r.add_argument("--session", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--verify", action="store_true", help="also check recorded request digests")
    r.add_argument("--jobs", type=int, default=default_jobs())
    r.set_defaults(func=cmd_replay)

    c = sub.add_parser("compare", help="compare system ratings with an expert sheet")
    c.add_argument("--system", required=True)
    c.add_argument("--expert", required=True)
    c.add_argument("--printed", help="YAML of published totals to check")
    c.add_argument("--format", choices=("text", "json"), default="text")
    c.set_defaults(func=cmd_compare)

    f = sub.add_parser("finetune-prep", help="turn a ratings table into fine-tuning records")
    f.add_argument("--ratings", required=True)
    f.add_argument("--dimension", required=True, choices=("technical", "market"))
    f.add_argument("--out", required=True)
    f.add_argument("--single-metric", action="store_true", help="one record per metric instead of multi-label")
    f.set_defaults(func=cmd_finetune_prep)

    d = sub.add_parser("demo", help="run the bundled three-concept scripted evaluation")
    d.add_argument("--out")
    d.add_argument("--jobs", type=int, default=default_jobs())
    d.set_defaults(func=cmd_demo)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail("usage", str(exc), 2)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        return _fail("usage", str(exc), 2)
    except _INPUT_ERRORS as exc:
        return _fail(_kind(exc), str(exc), 2)
    except (FileNotFoundError, IsADirectoryError) as exc:
        return _fail("file_not_found", str(exc), 2)
    except errors.DelibError as exc:
        return _fail(_kind(exc), str(exc), 1)
    except OSError as exc:
        return _fail("os_error", str(exc), 1)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
