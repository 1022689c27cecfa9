"""Regenerate the demo scenario, its tool fixtures and the checksum manifest.

Run after editing the scenario builder or any fixture file:

    python scripts/regen_fixtures.py
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import yaml

from delib.evaluation_model import default_model
from delib.fixtures import FILES, MANIFEST
from delib.scenario_builder import build_demo_documents

ROOT = Path(__file__).resolve().parents[1] / "src" / "delib" / "fixtures"


def dump(doc, header: str) -> str:
    return header + yaml.safe_dump(doc, sort_keys=False, allow_unicode=True, width=1000)


def main() -> None:
    concepts = yaml.safe_load((ROOT / "concepts.yaml").read_text(encoding="utf-8"))["concepts"]
    prepost = yaml.safe_load((ROOT / "ratings_prepost.yaml").read_text(encoding="utf-8"))
    criteria = prepost["criteria"]
    targets = {cid: dict(zip(criteria, cols["post"])) for cid, cols in prepost["ratings"].items()}
    scenario, tools = build_demo_documents(
        default_model(), [(c["id"], c["title"]) for c in concepts], targets
    )
    (ROOT / "scenarios").mkdir(exist_ok=True)
    (ROOT / "scenarios" / "demo.yaml").write_text(
        dump(scenario, "# Generated by scripts/regen_fixtures.py; final ratings follow the post-fine-tuning table.\n"),
        encoding="utf-8",
    )
    (ROOT / "tool_results.yaml").write_text(
        dump(tools, "# Generated by scripts/regen_fixtures.py; synthetic evidence for the demo scenario.\n"),
        encoding="utf-8",
    )
    lines = []
    for relpath in sorted(FILES.values()):
        digest = hashlib.sha256((ROOT / relpath).read_bytes()).hexdigest()
        lines.append(f"{digest}  {relpath}")
    (ROOT / MANIFEST).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {len(scenario['conversations'])} conversations, {len(tools['fixtures'])} tool fixtures")


if __name__ == "__main__":
    main()
