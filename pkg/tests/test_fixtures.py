from __future__ import annotations

from decimal import Decimal

import pytest
import yaml

import delib.fixtures as fx
from delib.errors import FixtureChecksumError, UnknownFixtureError
from delib.fixtures import FILES, concept_titles, load_fixture_set, manifest, read_fixture_bytes, sha256
from delib.scenario_builder import build_conversation, build_demo_documents, opening_value


def test_concepts():
    concepts = load_fixture_set("concepts")
    assert [c.concept_id for c in concepts] == ["depthview_3d", "precisioncad", "pixelmaster"]
    assert concept_titles() == {"depthview_3d": "DepthView 3D", "precisioncad": "PrecisionCAD",
                                "pixelmaster": "PixelMaster"}
    assert all(len(c.description) > 200 for c in concepts)


def test_expert_panel_shape():
    t7 = load_fixture_set("expert_panel")
    assert len(t7.tables["expert"].cells) == 18 and len(t7.tables["system"].cells) == 18
    assert set(t7.tables["expert"].raters()) == {"Expert-TD", "Expert-MF"}
    assert t7.printed_mean_delta == Decimal("0.31")
    assert set(t7.printed_cells) == {"delta"}
    pf = t7.printed_figures()
    assert pf.system_totals["depthview_3d"] == Decimal("38.5")


def test_system_rating_tables():
    t5 = load_fixture_set("ratings_pre")
    t6 = load_fixture_set("ratings_prepost")
    assert t5.tables["system"].merged() == t6.tables["pre"].merged()
    assert len(t6.tables["post"].cells) == 18


def test_unknown_fixture():
    with pytest.raises(UnknownFixtureError):
        load_fixture_set("no_such_set")


def test_checksum_mismatch(monkeypatch):
    bad = dict(manifest())
    bad[FILES["ratings_pre"]] = "0" * 64
    monkeypatch.setattr(fx, "manifest", lambda: bad)
    with pytest.raises(FixtureChecksumError):
        read_fixture_bytes("ratings_pre")


def test_manifest_covers_every_file():
    m = manifest()
    assert set(m) == set(FILES.values())
    for name in FILES:
        assert sha256(read_fixture_bytes(name)) == m[FILES[name]]


def test_demo_scenario_is_reproducible(model):
    concepts = load_fixture_set("concepts")
    t6 = yaml.safe_load(fx._read_bytes(FILES["ratings_prepost"]))
    targets = {c: dict(zip(t6["criteria"], cols["post"])) for c, cols in t6["ratings"].items()}
    scenario, tools = build_demo_documents(model, [(c.concept_id, c.title) for c in concepts], targets)
    stored = yaml.safe_load(read_fixture_bytes("demo_scenario"))
    assert stored == scenario
    assert yaml.safe_load(read_fixture_bytes("tool_results")) == tools
    assert len(scenario["conversations"]) == 18


def test_opening_value_stays_on_scale():
    assert opening_value(10.0, 0) == 9.5
    assert opening_value(0.0, 1) == 0.5
    assert opening_value(7.0, 0) == 7.5 and opening_value(7.0, 1) == 6.5


def test_build_conversation_shape(model):
    turns, tools = build_conversation(model, "precisioncad", "PrecisionCAD", "market_potential", 6.5, 0)
    speakers = [t["agent"] for t in turns]
    assert speakers == ["business_planner", "market_analyst", "customer_advocate", "risk_manager",
                        "market_analyst", "report_generator"]
    assert turns[-1]["text"].endswith("FINAL_ANSWER")
    assert len(tools) == 5
