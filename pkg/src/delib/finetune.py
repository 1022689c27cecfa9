"""Turn a product-ratings table into supervised fine-tuning records.

Only record preparation lives here; uploading and training are left to the
model provider.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .errors import FinetuneDataError
from .evaluation_model import RatingScale

DESCRIPTION_COLUMN = "description"

LABEL_GROUPS: dict[str, tuple[str, ...]] = {
    "technical": ("response_time", "color_accuracy", "horizontal_viewing_angle", "resolution", "brightness"),
    "market": ("gaming", "office", "editing"),
}

_DIMENSION_ALIASES = {
    "technical": "technical",
    "technical_feasibility": "technical",
    "market": "market",
    "market_feasibility": "market",
}


@dataclass(frozen=True)
class FinetuneRecord:
    input: str
    labels: Mapping[str, float]

    def to_json(self) -> str:
        return json.dumps({"input": self.input, "labels": dict(self.labels)}, ensure_ascii=False)


@dataclass
class FinetuneBatch:
    records: list[FinetuneRecord]
    skipped: int = 0
    snapped: int = 0
    skipped_rows: list[int] = field(default_factory=list)

    def write(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.records:
                fh.write(rec.to_json() + "\n")


def read_ratings_table(source: str | Path, delimiter: str = ",") -> list[dict[str, str]]:
    if isinstance(source, Path) or ("\n" not in str(source) and Path(source).exists()):
        text = Path(source).read_text(encoding="utf-8")
    else:
        text = str(source)
    return list(csv.DictReader(io.StringIO(text), delimiter=delimiter))


def build_finetune_records(
    table: Iterable[Mapping[str, str | float | None]],
    dimension: str,
    scale: RatingScale | None = None,
    single_metric: bool = False,
) -> FinetuneBatch:
    """One multi-label record per usable row (or one per metric with ``single_metric``).

    Rows missing any metric of the dimension's label group, or carrying a
    value outside the scale, are skipped and counted. Values are snapped to
    the rating grid; ``snapped`` counts the labels that moved.
    """
    group = LABEL_GROUPS.get(_DIMENSION_ALIASES.get(dimension, ""))
    if group is None:
        raise FinetuneDataError(f"unknown dimension {dimension!r}; use technical or market")
    scale = scale or RatingScale()
    rows = list(table)
    if rows and DESCRIPTION_COLUMN not in rows[0]:
        raise FinetuneDataError(f"ratings table has no {DESCRIPTION_COLUMN!r} column")

    batch = FinetuneBatch(records=[])
    for idx, row in enumerate(rows):
        description = (row.get(DESCRIPTION_COLUMN) or "").strip() if isinstance(row.get(DESCRIPTION_COLUMN), str) else ""
        labels: dict[str, float] = {}
        usable = bool(description)
        for metric in group:
            raw = row.get(metric)
            if raw is None or (isinstance(raw, str) and not raw.strip()):
                usable = False
                break
            try:
                value = float(raw)
            except ValueError:
                usable = False
                break
            if not scale.contains(value):
                usable = False
                break
            snapped = scale.snap(value)
            if snapped != value:
                batch.snapped += 1
            labels[metric] = snapped
        if not usable:
            batch.skipped += 1
            batch.skipped_rows.append(idx)
            continue
        if single_metric:
            batch.records += [FinetuneRecord(description, {m: v}) for m, v in labels.items()]
        else:
            batch.records.append(FinetuneRecord(description, labels))

    if not batch.records:
        raise FinetuneDataError("no usable rows in ratings table")
    return batch
