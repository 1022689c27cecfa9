"""How agent messages are read: ratings, routing, tools and consensus."""

# %% Ratings: three phrases, last one wins
from delib.protocol import (
    RatingEvent,
    Stance,
    count_sentences,
    detect_consensus,
    parse_rating,
    parse_routing,
    parse_tool_requests,
)

msg = """CALL google_patents: glasses-free parallax display
The IP Expert said I rate this concept 8/10, but two close filings exist.
I suggest a rating of 6.5/10.
IP Expert"""

print(parse_rating(msg))
print(parse_tool_requests(msg))
print("sentences:", count_sentences(msg))

# %% Routing: the last line names one participant
names = {"ip_expert": "IP Expert", "technical_expert": "Technical Expert", "report_generator": "Report_Generator"}
for tail in ("IP Expert", "**technical_expert**", "Report_Generator", "See you later"):
    try:
        print(repr(tail), "->", parse_routing("...\n" + tail, names))
    except Exception as exc:
        print(repr(tail), "->", type(exc).__name__)

# %% Consensus: every expert's latest rating must equal the current one
history = [RatingEvent("ip_expert", 1, 7.0, Stance.PROPOSE),
           RatingEvent("technical_expert", 2, 6.5, Stance.SUGGEST_REVISION)]
print(detect_consensus(history, ["ip_expert", "technical_expert"]))
history.append(RatingEvent("ip_expert", 3, 6.5, Stance.AGREE))
print(detect_consensus(history, ["ip_expert", "technical_expert"]))
