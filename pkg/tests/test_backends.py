from __future__ import annotations

import json

import httpx
import pytest

from delib.backends import (
    Completion,
    LiveBackend,
    ScriptedBackend,
    SessionRecorder,
    TurnRequest,
    complete,
    read_session,
    scripted_from,
)
from delib.errors import DivergenceError, ScenarioFormatError, ScriptExhaustedError, TransportError


def req(agent="technical_expert", cid="c", instruction="go"):
    return TurnRequest(agent, "system", "role", "", instruction, conversation_id=cid)


def test_turn_request_requires_prompts():
    with pytest.raises(ValueError):
        TurnRequest("a", "", "role", "", "x")


def test_digest_depends_on_content():
    assert req().digest() == req().digest()
    assert req(instruction="other").digest() != req().digest()
    assert req(cid="other").digest() == req().digest()


def test_scripted_playback():
    text = "I rate this concept 7/10.\nTechnical Expert"
    backend = ScriptedBackend({"c": [("technical_expert", text)]})
    out = complete(backend, req())
    assert out == Completion(text, "scripted", 0.0)
    with pytest.raises(ScriptExhaustedError):
        complete(backend, req())


def test_divergence_message():
    backend = ScriptedBackend({"c": [("A", "x")]})
    with pytest.raises(DivergenceError) as err:
        backend.complete(req(agent="B"))
    assert "(expected A, got B)" in str(err.value)
    assert backend.remaining("c") == 1


def test_empty_script_is_noop():
    backend = scripted_from({"conversations": {}})
    assert backend.remaining("anything") == 0
    assert scripted_from("conversations: {}\n").remaining("x") == 0


def test_scenario_text_and_file(tmp_path):
    doc = "conversations:\n  c:\n    - {agent: A, text: hello}\n    - {agent: B, text: world}\n"
    path = tmp_path / "s.yaml"
    path.write_text(doc)
    for source in (doc, path, str(path)):
        b = scripted_from(source)
        assert [b.complete(req(agent=a)).text for a in "AB"] == ["hello", "world"]


@pytest.mark.parametrize("doc", [
    "- just a list",
    {"conversations": {"c": "not a list"}},
    {"conversations": {"c": [{"agent": "A"}]}},
    "conversations: [unclosed",
])
def test_malformed_scenarios(doc):
    with pytest.raises(ScenarioFormatError):
        scripted_from(doc)


def test_record_replay_identity(tmp_path):
    inner = ScriptedBackend({"c1": [("A", "one"), ("B", "two")], "c2": [("A", "three")]})
    rec = SessionRecorder(inner)
    seq = [("c2", "A"), ("c1", "A"), ("c1", "B")]
    first = [rec.complete(req(agent=a, cid=c)).text for c, a in seq]
    path = tmp_path / "session.jsonl"
    rec.write(path, header={"format": 1}, order=["c1", "c2"])
    header, turns = read_session(path)
    assert header["format"] == 1
    assert [t["conversation_id"] for t in turns] == ["c1", "c1", "c2"]
    replay = scripted_from(path, verify_digests=True)
    again = [replay.complete(req(agent=a, cid=c)) for c, a in seq]
    assert [c.text for c in again] == first
    assert {c.backend_kind for c in again} == {"replay"}


def test_replay_digest_mismatch(tmp_path):
    rec = SessionRecorder(ScriptedBackend({"c": [("A", "one")]}))
    rec.complete(req(agent="A"))
    path = tmp_path / "s.jsonl"
    rec.write(path)
    with pytest.raises(DivergenceError):
        scripted_from(path, verify_digests=True).complete(req(agent="A", instruction="changed"))
    assert scripted_from(path).complete(req(agent="A", instruction="changed")).text == "one"


def test_read_session_errors(tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text("{not json}\n")
    with pytest.raises(ScenarioFormatError):
        read_session(bad)
    bad.write_text(json.dumps({"kind": "turn", "agent_id": "A"}) + "\n")
    with pytest.raises(ScenarioFormatError):
        read_session(bad)


def live(handler, **kw):
    sleeps = []
    backend = LiveBackend("https://llm/v1/chat", "m", api_key="k",
                          client=httpx.Client(transport=httpx.MockTransport(handler)),
                          sleep=sleeps.append, **kw)
    return backend, sleeps


def ok_response(text="hello"):
    return httpx.Response(200, json={"choices": [{"message": {"content": text}}]})


def test_live_success_payload():
    seen = {}

    def handler(request):
        seen["body"] = json.loads(request.content)
        seen["auth"] = request.headers["authorization"]
        return ok_response()

    backend, sleeps = live(handler)
    out = backend.complete(req())
    assert out.text == "hello" and out.backend_kind == "live"
    assert seen["auth"] == "Bearer k"
    assert seen["body"]["temperature"] == 0.0 and seen["body"]["model"] == "m"
    assert [m["role"] for m in seen["body"]["messages"]] == ["system", "user"]
    assert sleeps == []


def test_live_retries_then_succeeds():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(503) if len(calls) < 3 else ok_response("late")

    backend, sleeps = live(handler)
    assert backend.complete(req()).text == "late"
    assert sleeps == [1.0, 2.0]


def test_live_gives_up():
    calls = []

    def handler(request):
        calls.append(1)
        raise httpx.ConnectError("down", request=request)

    backend, sleeps = live(handler)
    with pytest.raises(TransportError):
        backend.complete(req())
    assert len(calls) == 4 and sleeps == [1.0, 2.0, 4.0]


@pytest.mark.parametrize("response", [httpx.Response(401), httpx.Response(200, json={"nope": 1})])
def test_live_fails_fast(response):
    calls = []

    def handler(request):
        calls.append(1)
        return response

    backend, sleeps = live(handler)
    with pytest.raises(TransportError):
        backend.complete(req())
    assert len(calls) == 1 and sleeps == []


def test_live_from_env(monkeypatch):
    monkeypatch.delenv("DELIB_LLM_ENDPOINT", raising=False)
    with pytest.raises(TransportError):
        LiveBackend.from_env()
    monkeypatch.setenv("DELIB_LLM_ENDPOINT", "https://x")
    monkeypatch.setenv("DELIB_LLM_MODEL", "ft:model")
    assert LiveBackend.from_env().model == "ft:model"
