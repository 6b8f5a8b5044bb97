"""Mock backend purity, the caching client, and the remote chat protocol."""

import hashlib
import json

import pytest

from l2ir.llm import (
    BackendError,
    LLMClient,
    MockLLMBackend,
    RemoteLLMBackend,
    get_backend,
    prompt_key,
    remote_backend_from_env,
)
from l2ir.prompts import (
    AUDIT_SECTIONS,
    PROFILE_SECTIONS,
    ExemplarCase,
    NodeSummary,
    Prompt,
    RelationContext,
    build_audit_prompt,
    build_profile_prompt,
    parse_audit_report,
)
from tests.conftest import StubEndpoint, make_trace


def _profile_prompt(node="u001", exemplar_labels=(1, 0), trace=None):
    trace = trace if trace is not None else make_trace([
        ("item_01", 0, 5, "great cheap watch deal", 0.1),
        ("item_02", 0, 5, "great deal buy now", 0.1),
        ("item_03", 0, 5, "great watch deal", 0.2),
    ])
    context = RelationContext(
        neighbor_counts=(("buys", 3),), behavior_similarity=0.5,
        labeled_fraud=1, labeled_benign=2, unlabeled=0)
    ex_trace = make_trace([("item_09", 1, 4, "solid quality", 0.7)])
    exemplars = [
        ExemplarCase(summary=NodeSummary.from_trace(f"x{i}", ex_trace),
                     context=context, label=lab, score=0.5)
        for i, lab in enumerate(exemplar_labels)
    ]
    return build_profile_prompt(
        NodeSummary.from_trace(node, trace), trace, exemplars, context)


def _audit_prompt(divergent=True):
    if divergent:
        trace_a = make_trace([
            ("p1", 5, 5, "amazing deal", 0.1), ("p2", 5, 5, "amazing buy", 0.1),
            ("p3", 5, 5, "amazing watch", 0.1),
        ])
        trace_b = make_trace([("p1", 2, 1, "broke after a week", 0.9)])
    else:
        trace_a = make_trace([("p1", 1, 4, "decent product", 0.6)])
        trace_b = make_trace([("p2", 9, 4, "works fine", 0.7)])
    return build_audit_prompt(3, 8, 0.91, 0.12, 0.79, trace_a, trace_b,
                              display_u="u003", display_v="u008")


class TestMockBackend:
    def test_deterministic_and_distinct(self):
        mock = MockLLMBackend()
        p1, p2 = _profile_prompt("u001"), _profile_prompt("u002")
        assert mock.complete(p1.system, p1.user) == mock.complete(p1.system, p1.user)
        assert mock.complete(p1.system, p1.user) != mock.complete(p2.system, p2.user)
        assert mock.calls == 4

    def test_profile_sections_and_token_echo(self):
        mock = MockLLMBackend()
        p = _profile_prompt()
        out = mock.complete(p.system, p.user)
        pos = 0
        for section in PROFILE_SECTIONS:
            pos = out.index(section + ":", pos)
        # the dominant trace tokens surface in the response
        assert "great" in out and "deal" in out

    def test_profile_never_mentions_labels(self):
        mock = MockLLMBackend()
        p = _profile_prompt()
        out = mock.complete(p.system, p.user).lower()
        for forbidden in ("ground-truth", "fraudulent", "benign"):
            assert forbidden not in out

    def test_profile_ignores_exemplar_labels(self):
        # identical target, flipped exemplar labels: the response may not
        # change, otherwise label information would leak into embeddings
        mock = MockLLMBackend()
        a = _profile_prompt(exemplar_labels=(1, 0))
        b = _profile_prompt(exemplar_labels=(0, 1))
        assert a.user != b.user
        assert mock.complete(a.system, a.user) == mock.complete(b.system, b.user)

    def test_audit_sections_parse_round_trip(self):
        mock = MockLLMBackend()
        p = _audit_prompt(divergent=True)
        out = mock.complete(p.system, p.user)
        pos = 0
        for section in AUDIT_SECTIONS:
            pos = out.index(section + ":", pos)
        report = parse_audit_report(out, edge=(3, 8))
        assert not report.degraded
        assert len(report.signals) == 3
        assert 0.0 <= report.confidence <= 1.0

    def test_audit_verdict_tracks_divergence(self):
        mock = MockLLMBackend()
        hot = _audit_prompt(divergent=True)
        cold = _audit_prompt(divergent=False)
        v_hot = parse_audit_report(mock.complete(hot.system, hot.user)).verdict
        v_cold = parse_audit_report(mock.complete(cold.system, cold.user)).verdict
        assert v_hot == "High"
        assert v_cold == "Low"

    def test_unparseable_prompt_kinds(self):
        mock = MockLLMBackend()
        with pytest.raises(BackendError, match="could not parse"):
            mock.complete("sys", "[Target Node]\nnothing else")
        out = mock.complete("sys", "free-form question")
        assert out.startswith("Acknowledged request ")


class TestPromptKey:
    def test_sha256_construction(self):
        want = hashlib.sha256(b"m\x00sys\x00usr").hexdigest()
        assert prompt_key("m", "sys", "usr") == want

    def test_distinct_fields_distinct_keys(self):
        assert prompt_key("m", "a", "b") != prompt_key("m", "ab", "")


class TestLLMClient:
    def test_cache_idempotent_single_backend_call(self, tmp_path):
        mock = MockLLMBackend()
        client = LLMClient(mock, cache_dir=tmp_path)
        p = _profile_prompt()
        first = client.complete(p)
        second = client.complete(p)
        assert first == second
        assert mock.calls == 1
        assert (client.cache_hits, client.cache_misses) == (1, 1)

    def test_cache_layout_and_content(self, tmp_path):
        mock = MockLLMBackend()
        client = LLMClient(mock, cache_dir=tmp_path)
        pp, ap = _profile_prompt(), _audit_prompt()
        client.complete(pp)
        client.complete(ap)
        key = prompt_key(mock.model_id, pp.system, pp.user)
        path = tmp_path / "profiles" / f"{key}.json"
        assert path.exists()
        assert (tmp_path / "audits").iterdir()
        entry = json.loads(path.read_text())
        assert entry["model"] == mock.model_id
        assert entry["kind"] == "profile"
        assert entry["text"] == client.complete(pp)
        assert not list(tmp_path.glob("**/*.tmp"))

    def test_warm_cache_uses_zero_backend_calls(self, tmp_path):
        prompts = [_profile_prompt(f"u{i:03d}") for i in range(6)]
        first = LLMClient(MockLLMBackend(), cache_dir=tmp_path)
        texts = first.complete_many(prompts)
        cold_backend = MockLLMBackend()
        warm = LLMClient(cold_backend, cache_dir=tmp_path)
        assert warm.complete_many(prompts) == texts
        assert cold_backend.calls == 0
        assert warm.cache_hits == len(prompts)

    def test_corrupt_cache_entry_refetches(self, tmp_path):
        mock = MockLLMBackend()
        client = LLMClient(mock, cache_dir=tmp_path)
        p = _profile_prompt()
        client.complete(p)
        path = client.cache_path(p)
        path.write_text("{not json")
        assert client.complete(p) == client.complete(p)
        assert mock.calls == 2  # one refetch, then the rewritten entry hits

    def test_no_cache_dir_always_calls_backend(self):
        mock = MockLLMBackend()
        client = LLMClient(mock, cache_dir=None)
        p = _profile_prompt()
        client.complete(p)
        client.complete(p)
        assert mock.calls == 2
        assert client.cache_path(p) is None

    def test_complete_many_preserves_order(self, tmp_path):
        ids = [f"u{i:03d}" for i in range(8)]
        prompts = [_profile_prompt(nid) for nid in ids]
        client = LLMClient(MockLLMBackend(), cache_dir=tmp_path, max_in_flight=4)
        out = client.complete_many(prompts)
        for nid, text in zip(ids, out):
            assert f"Account {nid} " in text
        assert client.complete_many([]) == []

    def test_serial_path_when_single_flight(self):
        client = LLMClient(MockLLMBackend(), max_in_flight=1)
        out = client.complete_many([_profile_prompt("u1"), _profile_prompt("u2")])
        assert len(out) == 2

    def test_max_in_flight_validated(self):
        with pytest.raises(ValueError, match="max_in_flight"):
            LLMClient(MockLLMBackend(), max_in_flight=0)


def _chat_payload(text):
    return {"choices": [{"message": {"role": "assistant", "content": text}}]}


class TestRemoteBackend:
    def test_wire_format(self):
        with StubEndpoint([(200, _chat_payload("hello back"))]) as stub:
            backend = RemoteLLMBackend(url=stub.url, model="m-1", api_key="sk",
                                       backoff=0.0)
            assert backend.complete("be brief", "hi") == "hello back"
            body = stub.requests[0]["body"]
            assert body["model"] == "m-1"
            assert body["messages"] == [
                {"role": "system", "content": "be brief"},
                {"role": "user", "content": "hi"},
            ]
            assert stub.requests[0]["headers"]["Authorization"] == "Bearer sk"

    def test_retries_server_errors_and_429(self):
        responses = [(500, {}), (429, {}), (200, _chat_payload("ok"))]
        with StubEndpoint(responses) as stub:
            backend = RemoteLLMBackend(url=stub.url, model="m", backoff=0.0)
            assert backend.complete("s", "u") == "ok"
            assert len(stub.requests) == 3
            assert backend.calls == 3

    def test_gives_up_after_max_retries(self):
        with StubEndpoint([(503, {})] * 3) as stub:
            backend = RemoteLLMBackend(url=stub.url, model="m", backoff=0.0,
                                       max_retries=3)
            with pytest.raises(BackendError, match="after 3 attempts"):
                backend.complete("s", "u")
            assert len(stub.requests) == 3

    def test_client_error_fails_fast(self):
        with StubEndpoint([(404, {"error": "nope"})]) as stub:
            backend = RemoteLLMBackend(url=stub.url, model="m", backoff=0.0)
            with pytest.raises(BackendError, match="status 404"):
                backend.complete("s", "u")
            assert len(stub.requests) == 1

    def test_malformed_completion_fails_fast(self):
        with StubEndpoint([(200, {"choices": []})]) as stub:
            backend = RemoteLLMBackend(url=stub.url, model="m", backoff=0.0)
            with pytest.raises(BackendError, match="malformed"):
                backend.complete("s", "u")
            assert len(stub.requests) == 1

    def test_factories(self, monkeypatch):
        assert isinstance(get_backend("mock"), MockLLMBackend)
        with pytest.raises(ValueError, match="unknown LLM backend"):
            get_backend("nope")
        monkeypatch.delenv("L2IR_LLM_URL", raising=False)
        monkeypatch.delenv("L2IR_LLM_MODEL", raising=False)
        with pytest.raises(BackendError, match="L2IR_LLM_URL"):
            remote_backend_from_env()
        monkeypatch.setenv("L2IR_LLM_URL", "http://example.invalid/v1")
        monkeypatch.setenv("L2IR_LLM_MODEL", "chat-x")
        monkeypatch.setenv("L2IR_LLM_KEY", "sk-test")
        backend = remote_backend_from_env()
        assert backend.model_id == "chat-x" and backend.api_key == "sk-test"


def test_client_works_through_remote_backend(tmp_path):
    # end-to-end: caching client over the HTTP protocol
    with StubEndpoint([(200, _chat_payload("styled report"))]) as stub:
        backend = RemoteLLMBackend(url=stub.url, model="m", backoff=0.0)
        client = LLMClient(backend, cache_dir=tmp_path)
        p = Prompt(kind="audit", system="s", user="u")
        assert client.complete(p) == "styled report"
        assert client.complete(p) == "styled report"
        assert len(stub.requests) == 1
