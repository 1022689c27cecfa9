"""The bundled three-concept evaluation, recorded and replayed.

Equivalent to ``delib demo`` followed by ``delib replay --verify``.
"""

# %% Evaluate
import filecmp
import tempfile
from pathlib import Path

from delib.cli import main

work = Path(tempfile.mkdtemp(prefix="delib-walkthrough-"))
main(["demo", "--out", str(work / "first")])

# %% Look at one report
report = work / "first" / "reports" / "pixelmaster" / "market_potential.md"
print(report.read_text()[:900])

# %% Replay the recorded session and diff
main(["replay", "--session", str(work / "first" / "session.jsonl"), "--out", str(work / "second"), "--verify"])
cmp = filecmp.dircmp(work / "first", work / "second")
print("top-level differences:", cmp.diff_files or "none")
