"""Scorecard arithmetic, concept ranking, expert comparison and report rendering.

All arithmetic is exact: ratings are :class:`~decimal.Decimal`, the mean
difference is a Decimal quotient, and Kendall's tau is a
:class:`~fractions.Fraction`.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from decimal import Decimal
from fractions import Fraction
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .errors import MisalignedTablesError, MissingRatingError, ScoringError
from .evaluation_model import EvaluationModel, RatingScale
from .orchestrator import ConceptScorecard, CriterionOutcome

SYSTEM = "system"


def to_decimal(value: Decimal | float | int | str) -> Decimal:
    if isinstance(value, Decimal):
        return value
    if isinstance(value, float):
        return Decimal(repr(value))
    return Decimal(str(value))


def fmt(value: Decimal | None, signed: bool = False) -> str:
    """One decimal place, as ratings are printed (``7.0``, ``+0.5``)."""
    if value is None:
        return "-"
    q = value.quantize(Decimal("0.1"))
    if signed and q > 0:
        return f"+{q}"
    if q == 0:
        return "0.0"
    return str(q)


# -- rating tables ------------------------------------------------------------


@dataclass(frozen=True)
class RatingCell:
    concept_id: str
    criterion_id: str
    rating: Decimal
    rater: str = SYSTEM


@dataclass(frozen=True)
class RatingTable:
    """Ratings keyed by (concept, criterion, rater).

    ``rater`` is ``"system"`` for engine output or an expert label such as
    ``"Expert-TD"``. Expert sheets may split criteria between raters; each
    (concept, criterion) must then be covered by exactly one of them.
    """

    cells: tuple[RatingCell, ...]
    scale: RatingScale = field(default_factory=RatingScale)

    def __post_init__(self) -> None:
        seen: set[tuple[str, str, str]] = set()
        for c in self.cells:
            key = (c.concept_id, c.criterion_id, c.rater)
            if key in seen:
                raise ScoringError(f"duplicate rating cell {key}")
            seen.add(key)
            if not self.scale.on_grid(float(c.rating)):
                raise ScoringError(f"rating {c.rating} for {key} is not on the {self.scale.step:g} grid")

    @classmethod
    def from_rows(cls, rows: Iterable[tuple[str, str, Any, str]], scale: RatingScale | None = None) -> "RatingTable":
        cells = tuple(RatingCell(c, k, to_decimal(r), rater) for c, k, r, rater in rows)
        return cls(cells, scale or RatingScale())

    @classmethod
    def from_scorecards(cls, scorecards: Iterable[ConceptScorecard], rater: str = SYSTEM) -> "RatingTable":
        cells = []
        for sc in scorecards:
            for crit, value in sc.ratings.items():
                if value is not None:
                    cells.append(RatingCell(sc.concept_id, crit, to_decimal(value), rater))
        return cls(tuple(cells))

    def concepts(self) -> list[str]:
        return list(dict.fromkeys(c.concept_id for c in self.cells))

    def criteria(self) -> list[str]:
        return list(dict.fromkeys(c.criterion_id for c in self.cells))

    def raters(self) -> list[str]:
        return list(dict.fromkeys(c.rater for c in self.cells))

    def select(self, raters: Iterable[str] | None = None, exclude: Iterable[str] = ()) -> "RatingTable":
        keep = set(raters) if raters is not None else None
        drop = set(exclude)
        return RatingTable(
            tuple(c for c in self.cells if (keep is None or c.rater in keep) and c.rater not in drop),
            self.scale,
        )

    def merged(self) -> dict[str, dict[str, Decimal]]:
        """concept -> criterion -> rating, merging raters (each cell rated once)."""
        out: dict[str, dict[str, Decimal]] = {}
        owner: dict[tuple[str, str], str] = {}
        for c in self.cells:
            key = (c.concept_id, c.criterion_id)
            if key in owner:
                raise ScoringError(f"{key} rated by both {owner[key]} and {c.rater}")
            owner[key] = c.rater
            out.setdefault(c.concept_id, {})[c.criterion_id] = c.rating
        return out

    def rater_of(self) -> dict[tuple[str, str], str]:
        return {(c.concept_id, c.criterion_id): c.rater for c in self.cells}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["concept", "criterion", "rating", "rater"])
        for c in self.cells:
            w.writerow([c.concept_id, c.criterion_id, str(c.rating), c.rater])
        return buf.getvalue()


def read_rating_sheet(source: str | Path, delimiter: str = ",", default_rater: str = SYSTEM) -> RatingTable:
    """Parse a ``concept,criterion,rating,rater`` sheet (rater column optional)."""
    if isinstance(source, Path) or ("\n" not in str(source) and Path(source).exists()):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = str(source)
    reader = csv.DictReader(io.StringIO(text), delimiter=delimiter)
    missing = {"concept", "criterion", "rating"} - set(reader.fieldnames or ())
    if missing:
        raise ScoringError(f"rating sheet is missing columns: {', '.join(sorted(missing))}")
    rows = []
    for n, row in enumerate(reader, 2):
        try:
            rating = Decimal(row["rating"].strip())
        except Exception:
            raise ScoringError(f"line {n}: rating {row['rating']!r} is not a number") from None
        rows.append((row["concept"].strip(), row["criterion"].strip(), rating,
                     (row.get("rater") or default_rater).strip()))
    return RatingTable.from_rows(rows)


# -- aggregate / rank / tau ---------------------------------------------------


def aggregate(
    ratings: ConceptScorecard | Mapping[str, Any],
    criteria: Sequence[str] | None = None,
    weights: Mapping[str, Any] | None = None,
) -> Decimal:
    """Sum of criterion ratings (weights default to 1).

    With ``criteria`` given, every listed criterion must be present.
    """
    values = ratings.ratings if isinstance(ratings, ConceptScorecard) else ratings
    keys = list(criteria) if criteria is not None else list(values)
    total = Decimal(0)
    for k in keys:
        v = values.get(k)
        if v is None:
            raise MissingRatingError(f"no rating for criterion {k!r}")
        w = to_decimal(weights.get(k, 1)) if weights else Decimal(1)
        total += w * to_decimal(v)
    return total


_ORDINAL = {1: "st", 2: "nd", 3: "rd"}


def ordinal(n: int) -> str:
    suffix = "th" if 10 <= n % 100 <= 20 else _ORDINAL.get(n % 10, "th")
    return f"{n}{suffix}"


@dataclass(frozen=True)
class RankEntry:
    concept_id: str
    total: Decimal
    rank: int
    tied: bool

    @property
    def label(self) -> str:
        return ("=" if self.tied else "") + ordinal(self.rank)


def rank(aggregates: Mapping[str, Any]) -> list[RankEntry]:
    """Descending order, competition ranking (1, 1, 3); ties keep input order."""
    items = [(k, to_decimal(v)) for k, v in aggregates.items()]
    ordered = sorted(items, key=lambda kv: -kv[1])
    counts: dict[Decimal, int] = {}
    for _, v in items:
        counts[v] = counts.get(v, 0) + 1
    out = []
    for i, (k, v) in enumerate(ordered):
        first = next(j for j, (_, w) in enumerate(ordered) if w == v)
        out.append(RankEntry(k, v, first + 1, counts[v] > 1))
    return out


def _sign(x: Decimal | Fraction | float) -> int:
    return (x > 0) - (x < 0)


def kendall_tau(a: Mapping[str, Any], b: Mapping[str, Any]) -> Fraction:
    """(concordant - discordant) / pairs over the shared keys; tied pairs count neither.

    Fewer than two items compare trivially equal (tau = 1).
    """
    keys = [k for k in a if k in b]
    if set(keys) != set(a) or set(keys) != set(b):
        raise MisalignedTablesError("tau needs the same items on both sides")
    n = len(keys)
    if n < 2:
        return Fraction(1)
    score = 0
    pairs = 0
    for i in range(n):
        for j in range(i + 1, n):
            ki, kj = keys[i], keys[j]
            score += _sign(to_decimal(a[ki]) - to_decimal(a[kj])) * _sign(to_decimal(b[ki]) - to_decimal(b[kj]))
            pairs += 1
    return Fraction(score, pairs)


def tau_from_orders(order_a: Sequence[str], order_b: Sequence[str]) -> Fraction:
    """Tau between two strict orderings of the same items (best first)."""
    n = len(order_a)
    return kendall_tau({k: n - i for i, k in enumerate(order_a)}, {k: n - i for i, k in enumerate(order_b)})


# -- comparison ---------------------------------------------------------------


@dataclass(frozen=True)
class Discrepancy:
    subject: str
    printed: Decimal
    computed: Decimal

    def __str__(self) -> str:
        return f"{self.subject}: printed {self.printed} but computed {self.computed}"


@dataclass(frozen=True)
class PrintedFigures:
    """Published totals to check a comparison against."""

    system_totals: Mapping[str, Decimal] = field(default_factory=dict)
    expert_totals: Mapping[str, Decimal] = field(default_factory=dict)
    deltas: Mapping[str, Decimal] = field(default_factory=dict)
    mean_delta: Decimal | None = None
    mean_delta_places: int = 2


@dataclass(frozen=True)
class CellDelta:
    concept_id: str
    criterion_id: str
    expert: Decimal
    system: Decimal
    rater: str

    @property
    def delta(self) -> Decimal:
        return self.expert - self.system


@dataclass(frozen=True)
class ConceptComparison:
    concept_id: str
    rater_subtotals: Mapping[str, Decimal]
    expert_total: Decimal
    system_total: Decimal
    expert_rank: RankEntry
    system_rank: RankEntry

    @property
    def delta(self) -> Decimal:
        return self.expert_total - self.system_total


@dataclass(frozen=True)
class ComparisonReport:
    cells: tuple[CellDelta, ...]
    concepts: tuple[ConceptComparison, ...]
    criterion_mean_delta: Mapping[str, Decimal]
    mean_delta: Decimal
    system_ranking: tuple[RankEntry, ...]
    expert_ranking: tuple[RankEntry, ...]
    exact_rank_match: bool
    kendall_tau: Fraction
    discrepancies: tuple[Discrepancy, ...] = ()

    def concept(self, concept_id: str) -> ConceptComparison:
        for c in self.concepts:
            if c.concept_id == concept_id:
                return c
        raise KeyError(concept_id)


def compare(system: RatingTable, expert: RatingTable, printed: PrintedFigures | None = None) -> ComparisonReport:
    """Expert minus system, per cell, per concept and on average."""
    sys_cells = system.merged()
    exp_cells = expert.merged()
    if set(sys_cells) != set(exp_cells):
        raise MisalignedTablesError(
            f"concept sets differ: system {sorted(sys_cells)} vs expert {sorted(exp_cells)}"
        )
    for concept in sys_cells:
        if set(sys_cells[concept]) != set(exp_cells[concept]):
            raise MisalignedTablesError(f"criterion sets differ for {concept}")
    if not sys_cells:
        raise MisalignedTablesError("nothing to compare")

    owners = expert.rater_of()
    concepts = expert.concepts()
    cells = tuple(
        CellDelta(c, k, exp_cells[c][k], sys_cells[c][k], owners[(c, k)])
        for c in concepts
        for k in expert.criteria()
        if k in exp_cells[c]
    )

    sys_totals = {c: sum(sys_cells[c].values(), Decimal(0)) for c in concepts}
    exp_totals = {c: sum(exp_cells[c].values(), Decimal(0)) for c in concepts}
    sys_rank = rank(sys_totals)
    exp_rank = rank(exp_totals)
    sys_by = {r.concept_id: r for r in sys_rank}
    exp_by = {r.concept_id: r for r in exp_rank}

    per_concept = []
    for c in concepts:
        subtotals: dict[str, Decimal] = {}
        for cell in cells:
            if cell.concept_id == c:
                subtotals[cell.rater] = subtotals.get(cell.rater, Decimal(0)) + cell.expert
        per_concept.append(ConceptComparison(c, subtotals, exp_totals[c], sys_totals[c], exp_by[c], sys_by[c]))

    by_criterion: dict[str, list[Decimal]] = {}
    for cell in cells:
        by_criterion.setdefault(cell.criterion_id, []).append(cell.delta)
    criterion_mean = {k: sum(v, Decimal(0)) / len(v) for k, v in by_criterion.items()}
    mean = sum((c.delta for c in cells), Decimal(0)) / len(cells)

    exact = [r.concept_id for r in sys_rank] == [r.concept_id for r in exp_rank] and all(
        sys_by[c].rank == exp_by[c].rank for c in concepts
    )
    tau = kendall_tau(exp_totals, sys_totals)

    flags: list[Discrepancy] = []
    if printed is not None:
        for c in concepts:
            for label, table, computed in (
                ("system total", printed.system_totals, sys_totals[c]),
                ("expert total", printed.expert_totals, exp_totals[c]),
                ("delta", printed.deltas, exp_totals[c] - sys_totals[c]),
            ):
                if c in table and to_decimal(table[c]) != computed:
                    flags.append(Discrepancy(f"{c} {label}", to_decimal(table[c]), computed))
        if printed.mean_delta is not None:
            q = Decimal(1).scaleb(-printed.mean_delta_places)
            if mean.quantize(q) != to_decimal(printed.mean_delta).quantize(q):
                flags.append(Discrepancy("mean delta per criterion", to_decimal(printed.mean_delta), mean))

    return ComparisonReport(
        cells=cells,
        concepts=tuple(per_concept),
        criterion_mean_delta=criterion_mean,
        mean_delta=mean,
        system_ranking=tuple(sys_rank),
        expert_ranking=tuple(exp_rank),
        exact_rank_match=exact,
        kendall_tau=tau,
        discrepancies=tuple(flags),
    )


def audit_aggregates(table: RatingTable, printed: Mapping[str, Any], rater: str | None = None) -> list[Discrepancy]:
    """Recompute each concept's aggregate and flag printed totals that differ."""
    sub = table.select([rater]) if rater else table
    merged = sub.merged()
    out = []
    for concept, value in printed.items():
        computed = aggregate(merged.get(concept, {}), criteria=list(merged.get(concept, {})) or [concept])
        if to_decimal(value) != computed:
            out.append(Discrepancy(f"{concept} aggregate", to_decimal(value), computed))
    return out


def comparison_rows(
    report: ComparisonReport,
    expert_raters: Sequence[str],
    titles: Mapping[str, str] | None = None,
    criterion_names: Mapping[str, str] | None = None,
) -> list[dict[str, str]]:
    """Rows with one column per expert rater, then Expert Total, Agent System, delta."""
    titles = titles or {}
    names = criterion_names or {}
    rows: list[dict[str, str]] = []

    def row(product: str, criterion: str, **cols: str) -> dict[str, str]:
        base = {"product": product, "criterion": criterion}
        base.update({r: "" for r in expert_raters})
        base.update({"expert_total": "", "system": "", "delta": ""})
        base.update(cols)
        return base

    for cc in report.concepts:
        title = titles.get(cc.concept_id, cc.concept_id)
        for cell in report.cells:
            if cell.concept_id != cc.concept_id:
                continue
            cols = {r: ("-" if r != cell.rater else fmt(cell.expert)) for r in expert_raters}
            rows.append(row(title, names.get(cell.criterion_id, cell.criterion_id), **cols,
                            system=fmt(cell.system), delta=fmt(cell.delta, signed=True)))
        sub = {r: fmt(cc.rater_subtotals.get(r)) for r in expert_raters}
        rows.append(row(title, "Subtotal", **sub, expert_total=fmt(cc.expert_total),
                        system=fmt(cc.system_total), delta=fmt(cc.delta, signed=True)))
        rows.append(row(title, "Rank", expert_total=cc.expert_rank.label, system=cc.system_rank.label, delta="-"))
    return rows


def format_comparison(
    report: ComparisonReport,
    expert_raters: Sequence[str],
    titles: Mapping[str, str] | None = None,
    criterion_names: Mapping[str, str] | None = None,
) -> str:
    rows = comparison_rows(report, expert_raters, titles, criterion_names)
    header = ["Product", "Criteria", *expert_raters, "Expert Total", "Agent System", "Delta"]
    keys = ["product", "criterion", *expert_raters, "expert_total", "system", "delta"]
    lines = ["\t".join(header)] + ["\t".join(r[k] for k in keys) for r in rows]
    lines.append("")
    lines.append(f"mean delta per criterion: {report.mean_delta:.4f}")
    lines.append(f"exact rank match: {str(report.exact_rank_match).lower()}")
    lines.append(f"kendall tau: {float(report.kendall_tau):.4f}")
    for d in report.discrepancies:
        lines.append(f"discrepancy: {d}")
    return "\n".join(lines) + "\n"


def comparison_to_dict(report: ComparisonReport) -> dict[str, Any]:
    return {
        "cells": [
            {"concept": c.concept_id, "criterion": c.criterion_id, "rater": c.rater,
             "expert": str(c.expert), "system": str(c.system), "delta": str(c.delta)}
            for c in report.cells
        ],
        "concepts": [
            {"concept": c.concept_id, "rater_subtotals": {k: str(v) for k, v in c.rater_subtotals.items()},
             "expert_total": str(c.expert_total), "system_total": str(c.system_total), "delta": str(c.delta),
             "expert_rank": c.expert_rank.label, "system_rank": c.system_rank.label}
            for c in report.concepts
        ],
        "criterion_mean_delta": {k: str(v) for k, v in report.criterion_mean_delta.items()},
        "mean_delta": str(report.mean_delta),
        "system_ranking": [r.concept_id for r in report.system_ranking],
        "expert_ranking": [r.concept_id for r in report.expert_ranking],
        "exact_rank_match": report.exact_rank_match,
        "kendall_tau": str(report.kendall_tau),
        "discrepancies": [str(d) for d in report.discrepancies],
    }


# -- reports ------------------------------------------------------------------


@dataclass(frozen=True)
class CriterionReportData:
    criterion_id: str
    title: str
    status: str
    final_rating: Decimal | None
    consensus: bool
    forced: bool
    evolution: tuple[tuple[str, tuple[Decimal, ...]], ...]
    report_text: str


@dataclass(frozen=True)
class ConceptReportData:
    concept_id: str
    title: str
    criteria: tuple[CriterionReportData, ...]
    aggregate: Decimal | None
    rank: str | None = None


def _criterion_data(outcome: CriterionOutcome, model: EvaluationModel | None) -> CriterionReportData:
    def name(agent_id: str) -> str:
        return model.agent(agent_id).display_name if model else agent_id

    title = model.criterion(outcome.criterion_id).display_name if model else outcome.criterion_id
    return CriterionReportData(
        criterion_id=outcome.criterion_id,
        title=title,
        status=outcome.status,
        final_rating=None if outcome.final_rating is None else to_decimal(outcome.final_rating),
        consensus=outcome.consensus,
        forced=outcome.forced,
        evolution=tuple((name(a), tuple(to_decimal(v) for v in vs)) for a, vs in outcome.rating_evolution.items()),
        report_text=outcome.report_text,
    )


def report_data(
    subject: ConceptScorecard | Sequence[CriterionOutcome],
    model: EvaluationModel | None = None,
    rank_label: str | None = None,
) -> ConceptReportData:
    if isinstance(subject, ConceptScorecard):
        crits = tuple(_criterion_data(o, model) for o in subject.outcomes.values())
        total = None if subject.partial else aggregate(subject)
        return ConceptReportData(subject.concept_id, subject.title, crits, total, rank_label)
    outcomes = list(subject)
    if not outcomes:
        raise ScoringError("nothing to report")
    crits = tuple(_criterion_data(o, model) for o in outcomes)
    ratings = [c.final_rating for c in crits]
    total = None if any(r is None for r in ratings) else sum(ratings, Decimal(0))
    return ConceptReportData("", "", crits, total, rank_label)


def render_criterion_markdown(data: CriterionReportData, concept_title: str = "", level: int = 1) -> str:
    h = "#" * level
    heading = f"{h} {data.title}" + (f": {concept_title}" if concept_title else "")
    if data.final_rating is None:
        verdict = f"No final rating ({data.status})."
    elif data.consensus:
        verdict = f"Final rating: {fmt(data.final_rating)}/10 (consensus)."
    else:
        verdict = f"Final rating: {fmt(data.final_rating)}/10 (no consensus; last rating at the turn cap)."
    lines = [heading, "", verdict, "", f"{h}# Rating Evolution", "", "| Agent | Ratings |", "| --- | --- |"]
    for agent, values in data.evolution:
        trail = " -> ".join(fmt(v) for v in values) if values else "no rating"
        lines.append(f"| {agent} | {trail} |")
    lines += ["", f"{h}# Deliberation report", ""]
    lines.append(data.report_text.strip() if data.report_text else "(no report produced)")
    return "\n".join(lines) + "\n"


def render_markdown(data: ConceptReportData) -> str:
    title = data.title or data.concept_id or "Evaluation"
    lines = [f"# {title}", "", "| Criterion | Rating | Consensus |", "| --- | --- | --- |"]
    for c in data.criteria:
        lines.append(f"| {c.title} | {fmt(c.final_rating)} | {'yes' if c.consensus else 'no'} |")
    lines.append(f"| Aggregate | {fmt(data.aggregate)} | |")
    if data.rank:
        lines += ["", f"Rank among evaluated concepts: {data.rank}"]
    for c in data.criteria:
        lines += ["", render_criterion_markdown(c, level=2).rstrip()]
    return "\n".join(lines) + "\n"


def _data_to_dict(data: ConceptReportData) -> dict[str, Any]:
    return {
        "concept_id": data.concept_id,
        "title": data.title,
        "aggregate": None if data.aggregate is None else str(data.aggregate),
        "rank": data.rank,
        "criteria": [
            {
                "criterion_id": c.criterion_id,
                "title": c.title,
                "status": c.status,
                "final_rating": None if c.final_rating is None else str(c.final_rating),
                "consensus": c.consensus,
                "forced": c.forced,
                "rating_evolution": [{"agent": a, "ratings": [str(v) for v in vs]} for a, vs in c.evolution],
                "report_text": c.report_text,
            }
            for c in data.criteria
        ],
    }


def render_structured(data: ConceptReportData) -> str:
    return json.dumps(_data_to_dict(data), indent=2, ensure_ascii=False) + "\n"


def parse_structured(text: str) -> ConceptReportData:
    doc = json.loads(text)

    def dec(v: str | None) -> Decimal | None:
        return None if v is None else Decimal(v)

    crits = tuple(
        CriterionReportData(
            criterion_id=c["criterion_id"],
            title=c["title"],
            status=c["status"],
            final_rating=dec(c["final_rating"]),
            consensus=c["consensus"],
            forced=c["forced"],
            evolution=tuple((e["agent"], tuple(Decimal(v) for v in e["ratings"])) for e in c["rating_evolution"]),
            report_text=c["report_text"],
        )
        for c in doc["criteria"]
    )
    return ConceptReportData(doc["concept_id"], doc["title"], crits, dec(doc["aggregate"]), doc["rank"])


def render_report(
    subject: ConceptScorecard | Sequence[CriterionOutcome],
    format: str = "markdown",
    model: EvaluationModel | None = None,
    rank_label: str | None = None,
) -> str:
    data = report_data(subject, model, rank_label)
    if format == "markdown":
        return render_markdown(data)
    if format == "structured":
        return render_structured(data)
    raise ValueError(f"unknown report format {format!r}")


def scorecard_to_dict(scorecards: Sequence[ConceptScorecard], ranking: Sequence[RankEntry] | None = None) -> dict[str, Any]:
    labels = {r.concept_id: r.label for r in ranking or ()}
    return {
        "concepts": [
            {
                "concept_id": sc.concept_id,
                "title": sc.title,
                "ratings": {k: (None if v is None else str(to_decimal(v))) for k, v in sc.ratings.items()},
                "aggregate": None if sc.partial else str(aggregate(sc)),
                "partial": sc.partial,
                "failures": dict(sc.failures),
                "rank": labels.get(sc.concept_id),
            }
            for sc in scorecards
        ],
        "ranking": [r.concept_id for r in ranking or ()],
    }
