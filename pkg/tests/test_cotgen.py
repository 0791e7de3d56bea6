"""Prompt building, answer extraction, citation checks, caching, and the
endpoint client retry behavior."""

import threading

import pytest

from raft_forge.clients import EndpointConfig, HttpChatClient, MockChatClient, make_client
from raft_forge.corpus import Document
from raft_forge.cotgen import (
    CoTResponse,
    ResponseCache,
    build_cot_prompt,
    extract_final_answer,
    generate_cot,
    generate_targets,
    parse_citations,
    verify_citations,
)
from raft_forge.errors import (
    AuthFailure,
    EmptyAnswer,
    EndpointFailure,
    MalformedResponse,
    MissingAnswerDelimiter,
    NoOracle,
)

from .conftest import make_single_doc_record


def _oracles():
    return [
        Document("o0", "First", "Paris is the capital of France.", "oracle"),
        Document("o1", "Second", "France lies in western Europe.", "oracle"),
    ]


def _endpoint(url="mock:cot", **kw):
    return EndpointConfig(base_url=url, model_name="test-model", **kw)


# ------------------------------------------------------------------ extraction

def test_extract_simple():
    assert extract_final_answer("reasoning here\n##Answer: yes") == "yes"


def test_extract_last_occurrence():
    assert extract_final_answer("##Answer: a\n more\n##Answer: b") == "b"


def test_extract_missing_delimiter():
    with pytest.raises(MissingAnswerDelimiter):
        extract_final_answer("no delimiter here")


def test_extract_zh_delimiter():
    assert extract_final_answer("推理过程\n##答案：北京") == "北京"


def test_extract_empty_answer():
    with pytest.raises(EmptyAnswer):
        extract_final_answer("reasoning\n##Answer:   ")


def test_from_raw_parses_citations_and_answer():
    resp = CoTResponse.from_raw('Because "X" holds, we conclude.\n##Answer: Paris')
    assert resp.final_answer == "Paris"
    assert resp.citations == ["X"]
    assert resp.reasoning == 'Because "X" holds, we conclude.'


def test_from_raw_rejects_multiple_delimiters():
    with pytest.raises(MalformedResponse):
        CoTResponse.from_raw("##Answer: a\n##Answer: b")


def test_parse_citations_both_quote_styles():
    text = 'First "alpha beta" then 「中文引用」 and "gamma".'
    assert parse_citations(text) == ["alpha beta", "中文引用", "gamma"]


# --------------------------------------------------------------------- prompts

def test_prompt_contains_oracles_and_question():
    messages = build_cot_prompt("Where is Paris?", _oracles(), "en")
    assert [m["role"] for m in messages] == ["system", "user"]
    user = messages[1]["content"]
    assert "Paris is the capital of France." in user
    assert "France lies in western Europe." in user
    assert "Where is Paris?" in user
    assert "##Answer:" in messages[0]["content"]


def test_prompt_zh_template():
    record = make_single_doc_record(0, language="zh")
    messages = build_cot_prompt(record.question, record.oracle_documents(), "zh")
    assert "##答案：" in messages[0]["content"]
    assert record.documents[0].text in messages[1]["content"]


def test_prompt_no_oracle():
    with pytest.raises(NoOracle):
        build_cot_prompt("q", [], "en")


def test_prompt_purity():
    first = build_cot_prompt("Where?", _oracles(), "en")
    second = build_cot_prompt("Where?", _oracles(), "en")
    assert first == second


# ------------------------------------------------------------------- citations

def test_citation_exact_copy_passes():
    resp = CoTResponse.from_raw('"Paris is the capital of France." so.\n##Answer: Paris')
    report = verify_citations(resp, _oracles())
    assert report.results == [("Paris is the capital of France.", True)]
    assert report.pass_ratio == 1.0


def test_citation_unknown_quote_fails():
    resp = CoTResponse.from_raw('"The moon is cheese." so.\n##Answer: no')
    report = verify_citations(resp, _oracles())
    assert report.results[0][1] is False
    assert report.pass_ratio == 0.0


def test_citation_whitespace_normalized():
    resp = CoTResponse.from_raw('"Paris is  the\ncapital of France." so.\n##Answer: Paris')
    report = verify_citations(resp, _oracles())
    assert report.results[0][1] is True


# ----------------------------------------------------------------------- cache

def test_cache_roundtrip(tmp_path):
    cache = ResponseCache(tmp_path / "cache")
    resp = CoTResponse.from_raw('"X" then.\n##Answer: yes')
    key = cache.key([{"role": "user", "content": "hi"}], "m", 0.0)
    assert key == key.lower() and len(key) == 64
    assert cache.get(key) is None
    cache.put(key, resp)
    assert cache.get(key) == resp
    assert key in cache


def test_cache_key_sensitivity(tmp_path):
    cache = ResponseCache(tmp_path)
    messages = [{"role": "user", "content": "hi"}]
    assert cache.key(messages, "m1", 0.0) != cache.key(messages, "m2", 0.0)
    assert cache.key(messages, "m1", 0.0) != cache.key(messages, "m1", 0.5)


# ---------------------------------------------------------------- generate_cot

def test_generate_with_mock_and_cache(tmp_path):
    record = make_single_doc_record(0)
    cache = ResponseCache(tmp_path / "cache")
    client = MockChatClient(kind="cot", answer="A0")
    resp = generate_cot(record, _endpoint(), cache, client=client)
    assert resp.final_answer == "A0"
    assert client.calls == 1
    # citation quoted from the oracle document
    assert verify_citations(resp, record.oracle_documents()).pass_ratio == 1.0

    again = generate_cot(record, _endpoint(), cache, client=client)
    assert again == resp
    assert client.calls == 1  # cache hit: zero network calls


def test_generate_malformed_twice_raises(tmp_path):
    record = make_single_doc_record(0)
    client = MockChatClient(kind="no_delimiter")
    with pytest.raises(MalformedResponse):
        generate_cot(record, _endpoint(), ResponseCache(tmp_path), client=client)
    assert client.calls == 2  # one re-prompt before failing


def test_generate_recovers_on_reprompt(tmp_path):
    record = make_single_doc_record(0)
    client = MockChatClient(script=["no marker at all", "fixed now\n##Answer: A0"])
    resp = generate_cot(record, _endpoint(), ResponseCache(tmp_path), client=client)
    assert resp.final_answer == "A0"
    assert client.calls == 2


def test_generate_targets_batch(tmp_path):
    records = [make_single_doc_record(i) for i in range(6)]
    cache = ResponseCache(tmp_path / "cache")
    client = MockChatClient(kind="cot")
    cfg = _endpoint(concurrency_limit=3)
    results, stats = generate_targets(records, cfg, cache, client=client)
    assert len(results) == 6
    assert stats.cache_hits == 0 and stats.generated == 6

    rerun_results, rerun_stats = generate_targets(records, cfg, cache, client=client)
    assert rerun_stats.cache_hits == 6
    assert rerun_stats.hit_rate == 1.0
    assert client.calls == 6  # no new traffic on rerun
    assert {k: v.raw for k, v in rerun_results.items()} == {k: v.raw for k, v in results.items()}


# ---------------------------------------------------------------- http client

class _FakeResponse:
    def __init__(self, status_code, body=None, text=""):
        self.status_code = status_code
        self._body = body
        self.text = text

    def json(self):
        if self._body is None:
            raise ValueError("no body")
        return self._body


class _FakeSession:
    def __init__(self, outcomes):
        self.outcomes = list(outcomes)
        self.requests = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.requests.append({"url": url, "json": json, "headers": headers})
        outcome = self.outcomes.pop(0)
        if isinstance(outcome, Exception):
            raise outcome
        return outcome


def _ok(content="##Answer: fine"):
    return _FakeResponse(200, {"choices": [{"message": {"content": content}}]})


def test_http_client_retries_transient_then_succeeds():
    import requests as req

    sleeps = []
    session = _FakeSession([
        _FakeResponse(429),
        req.ConnectionError("boom"),
        _ok("hello"),
    ])
    client = HttpChatClient(
        _endpoint("http://x/v1/chat/completions", max_retries=3),
        session=session,
        sleeper=sleeps.append,
    )
    assert client.complete([{"role": "user", "content": "hi"}]) == "hello"
    assert len(session.requests) == 3
    assert sleeps == [1.0, 2.0]  # exponential backoff


def test_http_client_exhausts_retries():
    session = _FakeSession([_FakeResponse(500)] * 3)
    client = HttpChatClient(
        _endpoint("http://x", max_retries=2), session=session, sleeper=lambda s: None
    )
    with pytest.raises(EndpointFailure):
        client.complete([])
    assert len(session.requests) == 3


def test_http_client_auth_failure_no_retry(monkeypatch):
    monkeypatch.setenv("RAFT_FORGE_API_KEY", "sekrit")
    session = _FakeSession([_FakeResponse(401)])
    client = HttpChatClient(_endpoint("http://x"), session=session, sleeper=lambda s: None)
    with pytest.raises(AuthFailure):
        client.complete([])
    assert len(session.requests) == 1
    assert session.requests[0]["headers"]["Authorization"] == "Bearer sekrit"


def test_http_client_payload_shape():
    session = _FakeSession([_ok()])
    cfg = _endpoint("http://x/v1/chat/completions", temperature=0.5, max_output_tokens=77)
    client = HttpChatClient(cfg, session=session, sleeper=lambda s: None)
    client.complete([{"role": "user", "content": "hi"}])
    payload = session.requests[0]["json"]
    assert payload["model"] == "test-model"
    assert payload["temperature"] == 0.5
    assert payload["max_tokens"] == 77
    assert payload["messages"] == [{"role": "user", "content": "hi"}]


def test_make_client_mock_scheme():
    client = make_client(_endpoint("mock:echo=##Answer: yes"))
    assert isinstance(client, MockChatClient)
    assert client.complete([]) == "##Answer: yes"
    assert isinstance(make_client(_endpoint("http://host/v1")), HttpChatClient)


def test_mock_client_thread_safety():
    client = MockChatClient(kind="echo=ok")
    errors = []

    def hammer():
        try:
            for _ in range(50):
                client.complete([{"role": "user", "content": "x"}])
        except Exception as exc:  # noqa: BLE001
            errors.append(exc)

    threads = [threading.Thread(target=hammer) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors
    assert client.calls == 400
    assert len(client.transcript) == 400
