"""Rating tables: aggregates, ranks and the expert comparison.

Run with ``python demos/01_rating_tables.py``. Everything is offline.
"""

# %% Load the bundled tables
from delib.fixtures import concept_titles, load_fixture_set
from delib.scoring import aggregate, audit_aggregates, compare, format_comparison, rank

titles = concept_titles()
before = load_fixture_set("ratings_prepost").tables["pre"]
after = load_fixture_set("ratings_prepost").tables["post"]
criteria = load_fixture_set("ratings_prepost").criteria

# %% Aggregates before and after fine-tuning
for label, table in (("before", before), ("after", after)):
    totals = {c: aggregate(cells, criteria=criteria) for c, cells in table.merged().items()}
    print(label, {titles[c]: str(v) for c, v in totals.items()})
    print("  ranking:", [f"{e.label} {titles[e.concept_id]}" for e in rank(totals)])

# %% Printed totals are checked, not trusted
printed = load_fixture_set("ratings_prepost").printed["post_aggregate"]
for flag in audit_aggregates(after, printed):
    print("flag:", flag)

# %% Expert panel versus the system
t7 = load_fixture_set("expert_panel")
report = compare(t7.tables["system"], t7.tables["expert"], t7.printed_figures())
print(format_comparison(report, ["Expert-TD", "Expert-MF"], titles))
print("mean delta as a fraction of a point:", report.mean_delta)
