import json
import threading

import httpx
import numpy as np
import pytest

from weakrec import llm, promptgen
from weakrec.llm import (AuthError, BackendUnavailable, Budget, BudgetExhausted, ConfigurationError, Hints,
                         ManagedBackend, ResponseCache)
from weakrec.metrics import list_auc
from weakrec.promptgen import PromptInstance


def prompt_with(cands, history=("Old Film",)):
    titles = {k: t for k, t in enumerate(list(history) + list(cands))}
    h = list(range(len(history)))
    c = list(range(len(history), len(titles)))
    return promptgen.render_prompt(PromptInstance(0, h, c, 0, titles), "u")


def chat_reply(text):
    return {"choices": [{"message": {"role": "assistant", "content": text}}]}


@pytest.fixture
def api_key(monkeypatch):
    monkeypatch.setenv("WEAKREC_API_KEY", "sk-test")


def http_backend(handler, **kw):
    sleeps = []
    backend = llm.HttpBackend("https://llm.example/v1", "some-model", transport=httpx.MockTransport(handler),
                              sleep=sleeps.append, **kw)
    return backend, sleeps


# -- mocks ---------------------------------------------------------------------------


def test_oracle_puts_target_first():
    p = prompt_with(["A", "B", "C"])
    assert llm.MockOracle().complete(p, Hints(target="B")) == "1. B\n2. A\n3. C"
    assert llm.MockOracle().complete(prompt_with(["X"]), Hints(target="X")) == "1. X"
    with pytest.raises(llm.LlmError):
        llm.MockOracle().complete(p, Hints(target="Z"))


def test_identity():
    p = prompt_with(["A", "B"])
    assert llm.MockIdentity().complete(p) == "1. A\n2. B"
    assert llm.MockIdentity().complete(p, Hints(rs_order=("B", "A"))) == "1. B\n2. A"


def test_random_deterministic():
    p = prompt_with([f"T{k}" for k in range(10)])
    assert llm.MockRandom(3).complete(p) == llm.MockRandom(3).complete(p)
    assert llm.MockRandom(3).complete(p) != llm.MockRandom(4).complete(p)


def test_random_mean_candidate_auc_near_half():
    names = [f"Film {k}" for k in range(20)]
    aucs = []
    for seed in range(400):
        p = prompt_with(names, history=(f"H{seed}",))
        text = llm.MockRandom(seed).complete(p)
        titles = dict(enumerate(names))
        res = promptgen.parse_response(text, list(range(20)), titles, list(range(20)))
        aucs.append(list_auc(res.ranking, {0}))
    assert abs(np.mean(aucs) - 0.5) < 0.05


def test_mocks_make_no_network_calls(monkeypatch):
    def boom(*a, **k):
        raise AssertionError("network access")

    monkeypatch.setattr(httpx.HTTPTransport, "handle_request", boom)
    monkeypatch.setattr(httpx.Client, "send", boom)
    p = prompt_with(["A", "B"])
    for backend in (llm.MockOracle(), llm.MockIdentity(), llm.MockRandom(1)):
        backend.complete(p, Hints(target="A"))


def test_make_backend():
    assert isinstance(llm.make_backend("mock-random", seed=2), llm.MockRandom)
    with pytest.raises(ConfigurationError):
        llm.make_backend("gpt")


# -- HTTP client ---------------------------------------------------------------------


def test_request_body_and_parse(api_key):
    seen = []

    def handler(req):
        seen.append(req)
        return httpx.Response(200, json=chat_reply("1. A"))

    backend, _ = http_backend(handler)
    assert backend.complete("rank these") == "1. A"
    req = seen[0]
    body = json.loads(req.content)
    assert str(req.url) == "https://llm.example/v1/chat/completions"
    assert req.headers["authorization"] == "Bearer sk-test"
    assert body["temperature"] == 0 and body["top_p"] == 0.1 and body["max_tokens"] == 512
    assert body["messages"] == [{"role": "user", "content": "rank these"}]


def test_system_prompt(api_key):
    backend, _ = http_backend(lambda r: httpx.Response(200, json=chat_reply("x")), system_prompt="be brief")
    assert backend.request_body("p")["messages"][0] == {"role": "system", "content": "be brief"}


def test_retries_then_unavailable(api_key):
    calls = []

    def handler(req):
        calls.append(1)
        return httpx.Response(500)

    backend, sleeps = http_backend(handler)
    with pytest.raises(BackendUnavailable):
        backend.complete("p")
    assert len(calls) == 3 and sleeps == [1.0, 2.0]


def test_retry_recovers(api_key):
    replies = iter([httpx.Response(429), httpx.Response(200, json=chat_reply("ok"))])
    backend, sleeps = http_backend(lambda r: next(replies))
    assert backend.complete("p") == "ok" and sleeps == [1.0]


def test_transport_error_retried(api_key):
    def handler(req):
        raise httpx.ConnectError("refused")

    backend, _ = http_backend(handler)
    with pytest.raises(BackendUnavailable):
        backend.complete("p")


@pytest.mark.parametrize("status", [401, 403])
def test_auth_failure_is_terminal(api_key, status):
    calls = []

    def handler(req):
        calls.append(1)
        return httpx.Response(status)

    backend, _ = http_backend(handler)
    with pytest.raises(AuthError):
        backend.complete("p")
    assert len(calls) == 1


def test_malformed_payload(api_key):
    backend, _ = http_backend(lambda r: httpx.Response(200, json={"nope": 1}))
    with pytest.raises(llm.LlmError):
        backend.complete("p")


def test_missing_key_fails_before_network(monkeypatch):
    monkeypatch.delenv("WEAKREC_API_KEY", raising=False)
    calls = []

    def handler(req):
        calls.append(1)
        return httpx.Response(200, json=chat_reply("x"))

    with pytest.raises(ConfigurationError, match="WEAKREC_API_KEY"):
        llm.HttpBackend("https://llm.example/v1", "m", transport=httpx.MockTransport(handler))
    assert calls == []


# -- budget, cache, managed -------------------------------------------------------------


def test_budget_requests():
    b = Budget(max_requests=2)
    b.charge("a")
    b.charge("b")
    with pytest.raises(BudgetExhausted):
        b.charge("c")
    assert b.requests == 2


def test_budget_chars():
    b = Budget(max_total_prompt_chars=5)
    b.charge("abc")
    with pytest.raises(BudgetExhausted):
        b.charge("abc")
    assert b.prompt_chars == 3


def test_budget_thread_safe():
    b = Budget(max_requests=100)
    errors = []

    def worker():
        for _ in range(50):
            try:
                b.charge("x")
            except BudgetExhausted:
                errors.append(1)

    threads = [threading.Thread(target=worker) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert b.requests == 100 and len(errors) == 100


def test_cache_round_trip(tmp_path):
    cache = ResponseCache(tmp_path)
    k = ResponseCache.key("p", "m", {"temperature": 0.0})
    assert k != ResponseCache.key("p", "m", {"temperature": 0.5})
    assert cache.get(k) is None
    cache.put(k, "p", "m", {"temperature": 0.0}, "answer")
    assert cache.get(k) == "answer"
    assert ResponseCache(tmp_path).get(k) == "answer"
    assert not list(tmp_path.glob("*.tmp"))


class Counting(llm.LlmBackend):
    name = "counting"

    def __init__(self):
        self.calls = 0

    def complete(self, prompt, hints=None):
        self.calls += 1
        return f"reply to {prompt}"


def test_managed_backend_cache_before_budget(tmp_path):
    inner = Counting()
    m = ManagedBackend(inner, ResponseCache(tmp_path), Budget(max_requests=1))
    assert m.complete("p1") == "reply to p1"
    # cached: no budget needed
    assert m.complete("p1") == "reply to p1"
    with pytest.raises(BudgetExhausted):
        m.complete("p2")
    assert inner.calls == 1 and m.dispatched == 1 and m.cache_hits == 1


def test_managed_backend_without_cache():
    inner = Counting()
    m = ManagedBackend(inner)
    m.complete("a")
    m.complete("a")
    assert inner.calls == 2 and m.budget.requests == 2
