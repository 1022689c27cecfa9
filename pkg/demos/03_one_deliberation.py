"""Drive one criterion conversation with a hand-written script.

The script makes an expert jump to the report too early, so the engine
redirects the turn to the expert who has not rated yet.
"""

# %% Setup
import datetime as dt

from delib import ScriptedBackend, ToolPool, default_model
from delib.memory import MemoryStore
from delib.orchestrator import run_criterion
from delib.run_config import RunConfig
from delib.tools import load_fixtures

model = default_model()
run = RunConfig(current_date=dt.date(2025, 10, 1))
tools = load_fixtures([
    {"tool": "google_trends", "query": "glasses-free 3d monitor", "result": "Interest rose steadily since 2023."},
    {"tool": "google_patents", "query": "parallax barrier eye tracking", "result": "14 families; none combine both."},
    {"tool": "google_scholar", "query": "eye tracked autostereoscopic", "result": "Lab prototypes only."},
])

script = {"demo": [
    ("rd_director", "CALL google_trends: glasses-free 3D monitor\n"
                    "Interest is growing. Search parallax patents first.\nIP Expert"),
    ("ip_expert", "CALL google_patents: parallax barrier eye tracking\n"
                  "No family claims the full combination. I rate this concept 7.5/10.\nReport_Generator"),
    ("technical_expert", "CALL google_scholar: eye tracked autostereoscopic\n"
                         "Prototypes exist, so novelty is narrower. I suggest a rating of 7/10.\nIP Expert"),
    ("ip_expert", "CALL google_patents: parallax barrier eye tracking\n"
                  "I agree with the current rating of 7/10 because the overlap is real.\nReport_Generator"),
    ("report_generator", "## Consensus Summary\nThe panel settled on 7/10.\n\n"
                         "## Rating Evolution\n- IP Expert: 7.5 -> 7\n- Technical Expert: 7\n\nFINAL_ANSWER"),
]}

# %% Run it
out = run_criterion("A glasses-free 3D monitor.", "patentability", model, ScriptedBackend(script),
                    ToolPool(model, tools), MemoryStore(), run, "demo")
print("phases:", " -> ".join(out.phase_trace))
print("final:", out.final_rating, "consensus:", out.consensus)
print("evolution:", dict(out.rating_evolution))
for v in out.violations:
    print("advisory:", v.kind, v.detail)
for call in out.tool_audit:
    print("tool:", call.call_id, call.tool_id, call.status)
