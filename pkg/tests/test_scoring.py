from __future__ import annotations

import itertools
import json
from decimal import Decimal
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st
from scipy.stats import kendalltau

from delib.errors import MisalignedTablesError, MissingRatingError, ScoringError
from delib.fixtures import load_fixture_set
from delib.scoring import (
    PrintedFigures,
    RatingTable,
    aggregate,
    audit_aggregates,
    compare,
    comparison_to_dict,
    format_comparison,
    fmt,
    kendall_tau,
    ordinal,
    rank,
    read_rating_sheet,
    tau_from_orders,
)
from tests.oracles import tables as oracle

CONCEPTS = ["depthview_3d", "precisioncad", "pixelmaster"]


def test_aggregate_examples():
    assert aggregate({"a": 7.5, "b": 8, "c": 6.5}) == Decimal("22.0")
    assert aggregate({"a": 0.1, "b": 0.2}) == Decimal("0.3")
    assert aggregate({"a": 2, "b": 3}, weights={"a": 2}) == Decimal(7)
    with pytest.raises(MissingRatingError):
        aggregate({"a": 1}, criteria=["a", "b"])


@pytest.mark.parametrize("name, column, printed_row", [("ratings_pre", "pre", "aggregate"),
                                                       ("ratings_prepost", "pre", "pre_aggregate")])
def test_pre_aggregates_match_oracle_and_print(name, column, printed_row):
    fx = load_fixture_set(name)
    table = fx.tables["system" if name == "ratings_pre" else "pre"]
    want = oracle.column_totals(name, column)
    for concept, cells in table.merged().items():
        got = aggregate(cells, criteria=fx.criteria)
        assert Fraction(str(got)) == want[concept]
        assert got == fx.printed[printed_row][concept]
    assert [str(want[c]) for c in CONCEPTS] == ["89/2", "91/2", "45"]


def test_post_aggregates_and_flag():
    fx = load_fixture_set("ratings_prepost")
    merged = fx.tables["post"].merged()
    got = {c: aggregate(merged[c], criteria=fx.criteria) for c in CONCEPTS}
    assert {c: Fraction(str(v)) for c, v in got.items()} == oracle.column_totals("ratings_prepost", "post")
    assert got == {"depthview_3d": Decimal("37.5"), "precisioncad": Decimal("41.5"), "pixelmaster": Decimal("44.0")}
    flags = audit_aggregates(fx.tables["post"], fx.printed["post_aggregate"])
    assert [(f.subject, f.printed, f.computed) for f in flags] == [
        ("depthview_3d aggregate", Decimal("38.5"), Decimal("37.5"))]


def test_rank_competition_and_ties():
    r = rank({"a": 40, "b": 45.5, "c": 40, "d": 30})
    assert [(e.concept_id, e.rank, e.label) for e in r] == [
        ("b", 1, "1st"), ("a", 2, "=2nd"), ("c", 2, "=2nd"), ("d", 4, "4th")]
    assert [ordinal(n) for n in (1, 2, 3, 4, 11, 12, 13, 21, 22, 111)] == [
        "1st", "2nd", "3rd", "4th", "11th", "12th", "13th", "21st", "22nd", "111th"]


@pytest.mark.parametrize("perm", list(itertools.permutations("abc")))
def test_tau_all_permutations_against_scipy(perm):
    base = ["a", "b", "c"]
    got = tau_from_orders(base, list(perm))
    ref = kendalltau([3, 2, 1], [3 - list(perm).index(k) for k in base]).statistic
    assert float(got) == pytest.approx(ref)
    assert got.denominator in (1, 3)


def test_tau_examples():
    assert kendall_tau({"a": 3, "b": 2, "c": 1}, {"a": 3, "b": 2, "c": 1}) == 1
    assert tau_from_orders("abc", "cba") == -1
    assert tau_from_orders("abc", "bac") == Fraction(1, 3)
    assert kendall_tau({"a": 1}, {"a": 5}) == 1
    with pytest.raises(MisalignedTablesError):
        kendall_tau({"a": 1, "b": 2}, {"a": 1, "c": 2})


@given(st.dictionaries(st.sampled_from("abcdefg"), st.integers(0, 20), min_size=2),
       st.randoms(use_true_random=False))
def test_tau_matches_scipy_without_ties(a, rnd):
    keys = list(a)
    if len(set(a.values())) < len(a):
        return
    b_vals = list(range(len(keys)))
    rnd.shuffle(b_vals)
    b = dict(zip(keys, b_vals))
    ref = kendalltau([a[k] for k in keys], [b[k] for k in keys]).statistic
    assert float(kendall_tau(a, b)) == pytest.approx(ref)


def expert_panel():
    fx = load_fixture_set("expert_panel")
    return fx, compare(fx.tables["system"], fx.tables["expert"], fx.printed_figures())


def test_compare_expert_panel_ranking():
    fx, report = expert_panel()
    assert [r.concept_id for r in report.expert_ranking] == ["pixelmaster", "precisioncad", "depthview_3d"]
    assert [r.concept_id for r in report.expert_ranking] == oracle.order(oracle.expert_totals())
    assert report.exact_rank_match is True
    assert report.kendall_tau == 1


def test_compare_expert_panel_totals_match_oracle():
    fx, report = expert_panel()
    want = oracle.expert_totals()
    for c in CONCEPTS:
        cc = report.concept(c)
        assert Fraction(str(cc.expert_total)) == want[c]
        assert cc.rater_subtotals == {"Expert-TD": fx.printed["subtotal_td"][c], "Expert-MF": fx.printed["subtotal_mf"][c]}
        assert cc.expert_total == fx.printed["expert_total"][c]
    assert report.concept("depthview_3d").delta == Decimal("2.5")


def test_compare_expert_panel_mean_delta():
    _, report = expert_panel()
    deltas = oracle.cell_deltas()
    assert len(report.cells) == len(deltas) == 18
    assert Fraction(str(sum(c.delta for c in report.cells))) == sum(deltas) == 5
    assert abs(float(report.mean_delta) - 5.0 / 18) < 1e-4
    assert report.mean_delta.quantize(Decimal("0.0001")) == Decimal("0.2778")


def test_compare_expert_panel_flags():
    _, report = expert_panel()
    subjects = {d.subject: (d.printed, d.computed) for d in report.discrepancies}
    assert subjects == {
        "depthview_3d system total": (Decimal("38.5"), Decimal("37.5")),
        "depthview_3d delta": (Decimal("1.5"), Decimal("2.5")),
        "mean delta per criterion": (Decimal("0.31"), report.mean_delta),
    }


def test_compare_self_is_identity():
    fx = load_fixture_set("ratings_prepost")
    post = fx.tables["post"]
    r = compare(post, post)
    assert r.mean_delta == 0 and r.kendall_tau == 1 and r.exact_rank_match and r.discrepancies == ()


def test_compare_misaligned():
    a = RatingTable.from_rows([("x", "k1", 5, "s"), ("x", "k2", 5, "s")])
    b = RatingTable.from_rows([("x", "k1", 5, "e")])
    with pytest.raises(MisalignedTablesError):
        compare(a, b)


def test_table_validation():
    with pytest.raises(ScoringError):
        RatingTable.from_rows([("x", "k", 5, "s"), ("x", "k", 6, "s")])
    with pytest.raises(ScoringError):
        RatingTable.from_rows([("x", "k", 5.3, "s")])
    with pytest.raises(ScoringError):
        RatingTable.from_rows([("x", "k", 5, "a"), ("x", "k", 6, "b")]).merged()


def test_format_and_dict():
    fx, report = expert_panel()
    text = format_comparison(report, ["Expert-TD", "Expert-MF"])
    assert "mean delta per criterion: 0.2778" in text
    assert "kendall tau: 1.0000" in text
    assert "discrepancy: depthview_3d system total: printed 38.5 but computed 37.5" in text
    d = comparison_to_dict(report)
    json.dumps(d)
    assert d["expert_ranking"] == ["pixelmaster", "precisioncad", "depthview_3d"]
    assert d["kendall_tau"] == "1"
    assert fmt(Decimal("0.5"), signed=True) == "+0.5" and fmt(Decimal("-1"), signed=True) == "-1.0"


def test_rating_sheet_round_trip(tmp_path):
    fx = load_fixture_set("expert_panel")
    path = tmp_path / "sheet.csv"
    path.write_text(fx.tables["expert"].to_csv())
    again = read_rating_sheet(path)
    assert again.merged() == fx.tables["expert"].merged()
    assert again.rater_of() == fx.tables["expert"].rater_of()


def test_printed_mean_precision():
    fx, _ = expert_panel()
    system = fx.tables["system"]
    r = compare(system, fx.tables["expert"], PrintedFigures(mean_delta=Decimal("0.28")))
    assert r.discrepancies == ()
