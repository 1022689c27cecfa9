"""Hand-traced deliberation scripts for the patentability criterion.

Participants: rd_director (coordinator), ip_expert then technical_expert.
Each scenario lists the completions in the order the engine asks for them
and the phase sequence worked out by hand from the transition rules.
"""

from __future__ import annotations

CRITERION = "patentability"

COORD = "CALL google_trends: depth display\nInterest is steady. Search parallax patents first.\nIP Expert"


def ip(text: str, route: str) -> str:
    return f"CALL google_patents: parallax display\n{text}\n{route}"


def tech(text: str, route: str) -> str:
    return f"CALL google_scholar: parallax rendering\n{text}\n{route}"


REPORT = "## Consensus Summary\nAgreed.\n\n## Rating Evolution\n- IP Expert: 7\n\nFINAL_ANSWER"

SCENARIOS = {
    # consensus on the first round
    "happy": {
        "script": [
            ("rd_director", COORD),
            ("ip_expert", ip("Prior art is thin. I rate this concept 7/10.", "Technical Expert")),
            ("technical_expert", tech("I agree with the current rating of 7/10 because the claims look novel.",
                                      "Report_Generator")),
            ("report_generator", REPORT),
        ],
        "trace": ("coordinator_turn", "expert_turn(ip_expert)", "expert_turn(technical_expert)",
                  "report_generation", "done"),
        "consensus": True, "forced": False, "final": 7.0,
        "violations": [],
    },
    # ip_expert jumps to the report before technical_expert has rated
    "premature": {
        "script": [
            ("rd_director", COORD),
            ("ip_expert", ip("Prior art is thin. I rate this concept 7/10.", "Report_Generator")),
            ("technical_expert", tech("I agree with the current rating of 7/10 because the claims look novel.",
                                      "Report_Generator")),
            ("report_generator", REPORT),
        ],
        "trace": ("coordinator_turn", "expert_turn(ip_expert)", "expert_turn(technical_expert)",
                  "report_generation", "done"),
        "consensus": True, "forced": False, "final": 7.0,
        "violations": [(1, "ip_expert", "premature_report")],
    },
    # ip_expert twice ends on a non-name: one repair, then fallback to the next expert
    "malformed": {
        "script": [
            ("rd_director", COORD),
            ("ip_expert", ip("Prior art is thin. I rate this concept 7/10.", "See you later")),
            ("ip_expert", ip("Prior art is thin. I rate this concept 7/10.", "Over to the team")),
            ("technical_expert", tech("I agree with the current rating of 7/10 because the claims look novel.",
                                      "Report_Generator")),
            ("report_generator", REPORT),
        ],
        "trace": ("coordinator_turn", "expert_turn(ip_expert)", "expert_turn(technical_expert)",
                  "report_generation", "done"),
        "consensus": True, "forced": False, "final": 7.0,
        "violations": [(1, "ip_expert", "malformed_routing"), (1, "ip_expert", "malformed_routing"),
                       (1, "ip_expert", "rerouted")],
    },
    # max_turns=5: the completion that would make turn 4 an expert turn forces the report
    "turn_cap": {
        "max_turns": 5,
        "script": [
            ("rd_director", COORD),
            ("ip_expert", ip("Prior art is thin. I rate this concept 7/10.", "Technical Expert")),
            ("technical_expert", tech("Several close filings exist. I suggest a rating of 6/10.", "IP Expert")),
            ("ip_expert", ip("The filings differ in mechanism. I rate this concept 7/10.", "Technical Expert")),
            ("report_generator", REPORT),
        ],
        "trace": ("coordinator_turn", "expert_turn(ip_expert)", "expert_turn(technical_expert)",
                  "expert_turn(ip_expert)", "report_generation", "done"),
        "consensus": False, "forced": True, "final": 7.0,
        "violations": [(3, "ip_expert", "turn_cap")],
    },
}
