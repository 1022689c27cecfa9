from __future__ import annotations

import json

import pytest
from hypothesis import given, strategies as st

from delib.errors import FinetuneDataError
from delib.finetune import LABEL_GROUPS, build_finetune_records, read_ratings_table
from delib.fixtures import read_fixture_text

CORPUS = read_fixture_text("ratings_corpus")


def corpus():
    return read_ratings_table(CORPUS)


def test_two_row_table():
    batch = build_finetune_records(corpus()[:2], "technical")
    assert len(batch.records) == 2
    assert all(len(r.labels) == 5 for r in batch.records)


def test_corpus_counts():
    tech = build_finetune_records(corpus(), "technical_feasibility")
    market = build_finetune_records(corpus(), "market")
    assert (len(tech.records), tech.skipped) == (10, 0)
    assert (len(market.records), market.skipped) == (10, 0)
    assert all(set(r.labels) == set(LABEL_GROUPS["technical"]) for r in tech.records)
    assert all(set(r.labels) == set(LABEL_GROUPS["market"]) for r in market.records)


def test_labels_on_grid():
    batch = build_finetune_records(corpus(), "market")
    assert batch.records[0].labels == {"gaming": 8.0, "office": 7.5, "editing": 7.5}
    assert batch.snapped > 0
    for r in batch.records:
        assert all(v * 2 == int(v * 2) for v in r.labels.values())


def test_missing_metric_skipped():
    rows = corpus()
    rows[3]["editing"] = ""
    batch = build_finetune_records(rows, "market")
    assert (len(batch.records), batch.skipped, batch.skipped_rows) == (9, 1, [3])
    # technical group does not use editing
    assert build_finetune_records(rows, "technical").skipped == 0


def test_off_scale_and_garbage_skipped():
    rows = corpus()[:3]
    rows[0]["gaming"] = "11"
    rows[1]["office"] = "n/a"
    batch = build_finetune_records(rows, "market")
    assert batch.skipped == 2 and len(batch.records) == 1


def test_errors():
    with pytest.raises(FinetuneDataError):
        build_finetune_records([{"gaming": "1"}], "market")
    with pytest.raises(FinetuneDataError):
        build_finetune_records(corpus(), "aesthetics")
    rows = corpus()
    for r in rows:
        r["gaming"] = ""
    with pytest.raises(FinetuneDataError):
        build_finetune_records(rows, "market")


def test_single_metric_mode():
    batch = build_finetune_records(corpus(), "market", single_metric=True)
    assert len(batch.records) == 30
    assert all(len(r.labels) == 1 for r in batch.records)


def test_write_jsonl(tmp_path):
    batch = build_finetune_records(corpus()[:2], "technical")
    path = tmp_path / "ft.jsonl"
    batch.write(path)
    recs = [json.loads(line) for line in path.read_text().splitlines()]
    assert len(recs) == 2 and set(recs[0]) == {"input", "labels"}
    assert recs[0]["input"].startswith("Synthetic 27-inch IPS")


@given(st.permutations(list(range(10))))
def test_order_preserving_and_idempotent(order):
    rows = corpus()
    shuffled = [rows[i] for i in order]
    a = build_finetune_records(shuffled, "technical")
    b = build_finetune_records(shuffled, "technical")
    assert a.records == b.records
    base = build_finetune_records(rows, "technical").records
    assert a.records == [base[i] for i in order]
