"""Bundled, checksummed data: case-study concepts, published rating tables,
the demo deliberation script, tool results and a small ratings corpus.

Tables are stored exactly as printed, including totals that do not match
their own cells; callers re-derive and compare.
"""

from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass, field
from decimal import Decimal
from importlib import resources
from typing import Any, Mapping

import yaml

from ..backends import ScriptedBackend, _parse_scenario
from ..errors import FixtureChecksumError, FixtureError, UnknownFixtureError
from ..scoring import PrintedFigures, RatingTable, to_decimal
from ..tools import FixtureBackend, load_fixtures

MANIFEST = "MANIFEST.sha256"

FILES = {
    "concepts": "concepts.yaml",
    "ratings_pre": "ratings_pre.yaml",
    "ratings_prepost": "ratings_prepost.yaml",
    "expert_panel": "expert_panel.yaml",
    "demo_scenario": "scenarios/demo.yaml",
    "tool_results": "tool_results.yaml",
    "ratings_corpus": "ratings_corpus.csv",
}


@dataclass(frozen=True)
class ConceptFixture:
    concept_id: str
    title: str
    subtitle: str
    description: str


@dataclass(frozen=True)
class RatingFixture:
    """One published table: named rating tables plus printed summary rows.

    ``printed`` maps a row label (``aggregate``, ``expert_total``, ...) to
    per-concept values exactly as published.
    """

    table_id: str
    criteria: tuple[str, ...]
    tables: Mapping[str, RatingTable]
    printed: Mapping[str, Mapping[str, Decimal]] = field(default_factory=dict)
    printed_mean_delta: Decimal | None = None
    printed_cells: Mapping[str, Mapping[str, Mapping[str, Decimal]]] = field(default_factory=dict)

    def printed_figures(self) -> PrintedFigures:
        return PrintedFigures(
            system_totals=self.printed.get("system_total", {}),
            expert_totals=self.printed.get("expert_total", {}),
            deltas=self.printed.get("delta", {}),
            mean_delta=self.printed_mean_delta,
        )


@dataclass(frozen=True)
class ScenarioFixture:
    conversations: Mapping[str, tuple[tuple[str, str], ...]]

    def backend(self) -> ScriptedBackend:
        return ScriptedBackend({k: list(v) for k, v in self.conversations.items()})


def _root():
    return resources.files("delib").joinpath("fixtures")


def _read_bytes(relpath: str) -> bytes:
    node = _root()
    for part in relpath.split("/"):
        node = node.joinpath(part)
    try:
        return node.read_bytes()
    except FileNotFoundError:
        raise FixtureError(f"fixture file {relpath} is missing") from None


def manifest() -> dict[str, str]:
    out = {}
    for line in _read_bytes(MANIFEST).decode("utf-8").splitlines():
        if line.strip():
            digest, relpath = line.split(maxsplit=1)
            out[relpath] = digest
    return out


def sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def read_fixture_bytes(name: str) -> bytes:
    """Raw bytes of a named fixture after checking them against the manifest."""
    if name not in FILES:
        raise UnknownFixtureError(f"unknown fixture set {name!r}; known: {', '.join(sorted(FILES))}")
    relpath = FILES[name]
    data = _read_bytes(relpath)
    want = manifest().get(relpath)
    if want is None or want != sha256(data):
        raise FixtureChecksumError(f"{relpath} does not match its recorded checksum")
    return data


def read_fixture_text(name: str) -> str:
    return read_fixture_bytes(name).decode("utf-8")


def _decimals(mapping: Mapping[str, Any]) -> dict[str, Decimal]:
    return {k: to_decimal(v) for k, v in mapping.items()}


def _concepts(doc: Any) -> tuple[ConceptFixture, ...]:
    items = tuple(
        ConceptFixture(c["id"], c["title"], c.get("subtitle", ""), c["description"].strip())
        for c in doc["concepts"]
    )
    if len(items) != 3 or len({c.concept_id for c in items}) != 3:
        raise FixtureError("concept fixture must hold three distinct concepts")
    return items


def _table(doc: Any, criteria: list[str], column: str, rater: str) -> RatingTable:
    rows = []
    for concept, cols in doc["ratings"].items():
        values = cols[column]
        if len(values) != len(criteria):
            raise FixtureError(f"{concept}/{column}: expected {len(criteria)} values")
        for crit, v in zip(criteria, values):
            if v is not None:
                rows.append((concept, crit, to_decimal(v), rater))
    return RatingTable.from_rows(rows)


def _rating_fixture(doc: Any) -> RatingFixture:
    criteria = list(doc["criteria"])
    tables: dict[str, RatingTable] = {}
    for name, spec in doc["tables"].items():
        if "raters" in spec:
            rows = []
            for rater, column in spec["raters"].items():
                rows += [(c.concept_id, c.criterion_id, c.rating, rater)
                         for c in _table(doc, criteria, column, rater).cells]
            tables[name] = RatingTable.from_rows(rows)
        else:
            tables[name] = _table(doc, criteria, spec["column"], spec.get("rater", "system"))
    printed = {k: _decimals(v) for k, v in (doc.get("printed") or {}).items()}
    used = {spec.get("column") for spec in doc["tables"].values()}
    used |= {col for spec in doc["tables"].values() for col in (spec.get("raters") or {}).values()}
    cells: dict[str, dict[str, dict[str, Decimal]]] = {}
    for concept, cols in doc["ratings"].items():
        for column, values in cols.items():
            if column not in used:
                cells.setdefault(column, {})[concept] = {
                    k: to_decimal(v) for k, v in zip(criteria, values) if v is not None
                }
    mean = doc.get("printed_mean_delta")
    return RatingFixture(doc["table_id"], tuple(criteria), tables, printed,
                         None if mean is None else to_decimal(mean), cells)


def load_fixture_set(name: str) -> Any:
    """Load, checksum and parse one bundled fixture set.

    ========================  ==================================================
    ``concepts``              tuple of three :class:`ConceptFixture`
    ``ratings_pre``, ``ratings_prepost``, ``expert_panel``  :class:`RatingFixture`
    ``demo_scenario``         :class:`ScenarioFixture` (18 conversations)
    ``tool_results``          :class:`~delib.tools.FixtureBackend`
    ``ratings_corpus``        list of csv rows (dicts)
    ========================  ==================================================
    """
    text = read_fixture_text(name)
    if name == "ratings_corpus":
        return list(csv.DictReader(io.StringIO(text)))
    doc = yaml.safe_load(text)
    if name == "concepts":
        return _concepts(doc)
    if name in ("ratings_pre", "ratings_prepost", "expert_panel"):
        return _rating_fixture(doc)
    if name == "demo_scenario":
        script = _parse_scenario(doc)
        return ScenarioFixture({k: tuple(v) for k, v in script.items()})
    if name == "tool_results":
        return load_fixtures(doc["fixtures"])
    raise UnknownFixtureError(name)  # pragma: no cover - FILES and this switch move together


def concept_titles() -> dict[str, str]:
    return {c.concept_id: c.title for c in load_fixture_set("concepts")}


def tool_backend() -> FixtureBackend:
    return load_fixture_set("tool_results")
