"""LLM gateway: stub determinism, embeddings, prompt templates, HTTP retries and rate limiting."""
import json
import random
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from types import SimpleNamespace

import numpy as np
import pytest
import requests

from src.indexing.analyzer import analyze
from src.llm.gateway import (
    ChatRequest,
    GatewayConfig,
    JsonHttpClient,
    LiveBackend,
    LLMGateway,
    RateLimiter,
    StubBackend,
)
from src.llm.prompts import PromptLibrary, PromptTemplate, render_text
from src.utils.errors import GatewayConfigError, PromptTemplateError, TransportError

TEMPLATE_NAMES = [
    "answer_question", "boolean_keyphrases", "cot_expansion", "craap_scoring", "question_filter",
    "question_generation", "relevance_judge", "similarity_judge", "structured_query", "synthesize_report",
]


# --- stub backend -----------------------------------------------------------

def test_stub_chat_is_deterministic():
    req = ChatRequest("You are a careful assistant.", "Who funds the publisher?")
    assert StubBackend(seed=1).chat(req) == StubBackend(seed=1).chat(req)


def test_stub_canned_selection_is_keyed_on_prompts():
    backend = StubBackend(seed=3)
    backend.register_canned("generic", ["alpha {{name}}", "beta {{name}}", "gamma {{name}}"])
    req = ChatRequest("system", "user prompt", task="generic", variables={"name": "x"})
    first = backend.chat(req)
    assert first in {"alpha x", "beta x", "gamma x"}
    assert all(backend.chat(req) == first for _ in range(5))


def test_stub_custom_responder():
    backend = StubBackend(seed=3)
    backend.register("echo", lambda req, h: req.user_prompt.upper())
    assert backend.chat(ChatRequest("s", "hello", task="echo")) == "HELLO"


def test_stub_embeddings_identical_for_identical_text():
    gateway = LLMGateway(StubBackend(seed=42))
    a, b = gateway.embed(["a", "a"])
    assert np.array_equal(a.vector, b.vector)
    assert a.cosine(b) == pytest.approx(1.0)


@pytest.mark.parametrize("text", ["fluoride", "Who funds the publisher?", "", "the of and", "2,000 jobs"])
def test_stub_embeddings_unit_norm(text):
    (vector,) = LLMGateway(StubBackend(seed=42)).embed([text])
    assert vector.dimension == 384
    assert abs(np.linalg.norm(vector.vector) - 1.0) <= 1e-6


def test_stub_single_token_texts_in_different_buckets_are_orthogonal():
    backend = StubBackend(seed=42)
    gateway = LLMGateway(backend)
    words = ["fluoride", "battery", "ownership", "subsidy", "council", "journal"]
    checked = 0
    for i, a in enumerate(words):
        for b in words[i + 1:]:
            (ta,), (tb,) = analyze(a), analyze(b)
            if backend.token_bucket(ta)[0] == backend.token_bucket(tb)[0]:
                continue
            va, vb = gateway.embed([a, b])
            assert va.cosine(vb) == 0.0
            checked += 1
    assert checked >= 10


def test_overlapping_texts_have_positive_cosine():
    gateway = LLMGateway(StubBackend(seed=42))
    a, b = gateway.embed(["fluoride study funding", "fluoride study authors"])
    assert a.cosine(b) > 0


def test_embed_requires_texts():
    with pytest.raises(ValueError):
        LLMGateway(StubBackend()).embed([])


def test_chat_request_validation():
    with pytest.raises(ValueError):
        ChatRequest("system", "   ")
    with pytest.raises(ValueError):
        ChatRequest("system", "user", temperature=2.5)
    assert ChatRequest("s", "u").temperature == 0.0


def test_gateway_config_bounds():
    with pytest.raises(ValueError):
        GatewayConfig(max_retries=-1)
    with pytest.raises(ValueError):
        GatewayConfig(requests_per_second=0)
    with pytest.raises(ValueError):
        GatewayConfig(unknown_key=1)


# --- prompt templates -------------------------------------------------------

@pytest.mark.parametrize("name", TEMPLATE_NAMES)
def test_shipped_templates_parse(name):
    template = PromptLibrary().get(name)
    assert template.version >= 1
    assert template.user.strip()


def test_missing_placeholder_raises():
    with pytest.raises(PromptTemplateError, match="question"):
        render_text("Q: {{question}}", {})


def test_template_requires_version_line():
    with pytest.raises(PromptTemplateError):
        PromptTemplate.parse("bad", "=== user ===\nhello")


def test_unknown_template(tmp_path):
    with pytest.raises(PromptTemplateError):
        PromptLibrary(tmp_path).get("nope")


def test_complete_routes_by_template(stub_gateway):
    assert stub_gateway.complete("question_filter", question="Who owns the outlet?") == "KEEP"


# --- live backend against a local server -------------------------------------

class _ScriptedHandler(BaseHTTPRequestHandler):
    script = []
    requests_seen = []

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length) or b"{}")
        type(self).requests_seen.append((self.path, body, self.headers.get("Authorization")))
        status, payload = type(self).script.pop(0) if type(self).script else (500, {})
        data = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def scripted_server():
    _ScriptedHandler.script = []
    _ScriptedHandler.requests_seen = []
    server = ThreadingHTTPServer(("127.0.0.1", 0), _ScriptedHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield server, _ScriptedHandler
    server.shutdown()
    server.server_close()


def _live(server, monkeypatch, max_retries=4, sleeps=None):
    monkeypatch.setenv("TEST_LLM_KEY", "secret")
    config = GatewayConfig(backend="live", base_url=f"http://127.0.0.1:{server.server_port}/v1",
                           api_key_env_var="TEST_LLM_KEY", max_retries=max_retries,
                           requests_per_second=1000.0)
    sleeps = sleeps if sleeps is not None else []
    return LLMGateway.from_config(config, sleep=sleeps.append)


def _completion(text):
    return {"choices": [{"message": {"role": "assistant", "content": text}}]}


def test_live_retries_after_429(scripted_server, monkeypatch):
    server, handler = scripted_server
    handler.script = [(429, {"error": "slow down"}), (200, _completion("RELEVANT - yes"))]
    sleeps = []
    gateway = _live(server, monkeypatch, sleeps=sleeps)
    reply = gateway.chat(ChatRequest("system", "user"))
    assert reply == "RELEVANT - yes"
    assert len(handler.requests_seen) == 2
    backoff = [s for s in sleeps if s >= 1.0]
    assert len(backoff) == 1 and 1.0 <= backoff[0] <= 1.5
    path, body, auth = handler.requests_seen[-1]
    assert path == "/v1/chat/completions"
    assert auth == "Bearer secret"
    assert body["messages"][1] == {"role": "user", "content": "user"}


def test_live_gives_up_after_max_retries(scripted_server, monkeypatch):
    server, handler = scripted_server
    handler.script = [(500, {})] * 5
    gateway = _live(server, monkeypatch, max_retries=4)
    with pytest.raises(TransportError) as err:
        gateway.chat(ChatRequest("system", "user"))
    assert err.value.status == 500
    assert len(handler.requests_seen) == 5


def test_live_client_errors_are_not_retried(scripted_server, monkeypatch):
    server, handler = scripted_server
    handler.script = [(400, {"error": "bad request"})]
    gateway = _live(server, monkeypatch)
    with pytest.raises(TransportError) as err:
        gateway.chat(ChatRequest("system", "user"))
    assert err.value.status == 400
    assert len(handler.requests_seen) == 1


def test_live_embeddings_keep_order(scripted_server, monkeypatch):
    server, handler = scripted_server
    handler.script = [(200, {"data": [{"index": 1, "embedding": [0.0, 2.0]},
                                      {"index": 0, "embedding": [3.0, 4.0]}]})]
    gateway = _live(server, monkeypatch)
    first, second = gateway.embed(["a", "b"])
    assert first.vector.tolist() == [3.0, 4.0] and first.norm == pytest.approx(5.0)
    assert second.vector.tolist() == [0.0, 2.0]


def test_live_requires_api_key(monkeypatch):
    monkeypatch.delenv("MISSING_LLM_KEY", raising=False)
    monkeypatch.setattr("src.llm.gateway.load_dotenv", lambda: None)
    config = GatewayConfig(backend="live", api_key_env_var="MISSING_LLM_KEY")
    with pytest.raises(GatewayConfigError):
        LiveBackend(config)


def test_backoff_grows_exponentially():
    client = JsonHttpClient("http://localhost", rng=random.Random(0))
    for attempt in range(4):
        delay = client.backoff_delay(attempt)
        base = 2.0 ** attempt
        assert base <= delay <= 1.5 * base


def scripted_post(monkeypatch, outcomes):
    """Replace requests.post: exceptions in `outcomes` are raised, dicts become 200 replies."""
    calls = []

    def fake_post(url, **kwargs):
        calls.append(url)
        outcome = outcomes[min(len(calls), len(outcomes)) - 1]
        if isinstance(outcome, Exception):
            raise outcome
        return SimpleNamespace(status_code=200, headers={}, json=lambda: outcome)

    monkeypatch.setattr("src.llm.gateway.requests.post", fake_post)
    return calls


def test_broken_read_is_retried(monkeypatch):
    calls = scripted_post(monkeypatch, [requests.exceptions.ChunkedEncodingError("cut"), {"ok": True}])
    sleeps = []
    client = JsonHttpClient("http://localhost", sleep=sleeps.append, rng=random.Random(0))
    assert client.post("x", {}) == {"ok": True}
    assert len(calls) == 2 and len(sleeps) == 1


def test_persistent_broken_reads_become_transport_error(monkeypatch):
    calls = scripted_post(monkeypatch, [requests.exceptions.ChunkedEncodingError("cut")])
    client = JsonHttpClient("http://localhost", max_retries=2, sleep=lambda s: None)
    with pytest.raises(TransportError):
        client.post("x", {})
    assert len(calls) == 3


def test_other_request_errors_fail_fast(monkeypatch):
    calls = scripted_post(monkeypatch, [requests.exceptions.InvalidURL("bad")])
    sleeps = []
    client = JsonHttpClient("http://localhost", sleep=sleeps.append)
    with pytest.raises(TransportError):
        client.post("x", {})
    assert len(calls) == 1 and sleeps == []


# --- rate limiter --------------------------------------------------------------

class VirtualClock:
    def __init__(self):
        self.now = 0.0

    def __call__(self):
        return self.now

    def sleep(self, seconds):
        self.now += seconds


def test_rate_limiter_spacing():
    clock = VirtualClock()
    limiter = RateLimiter(5.0, clock=clock, sleep=clock.sleep)
    issued = [limiter.acquire() for _ in range(20)]
    gaps = [b - a for a, b in zip(issued, issued[1:])]
    assert all(gap >= 0.2 - 1e-9 for gap in gaps)
    # no one-second window holds more than the rate (plus the initial burst token)
    for start in issued:
        assert sum(1 for t in issued if start <= t < start + 1.0) <= 5 + 1


def test_rate_limiter_refills_after_idle():
    clock = VirtualClock()
    limiter = RateLimiter(2.0, clock=clock, sleep=clock.sleep)
    limiter.acquire()
    clock.now += 10.0
    before = clock.now
    limiter.acquire()
    assert clock.now == before
