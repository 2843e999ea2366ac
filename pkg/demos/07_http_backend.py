"""
The chat-completion client without a server
===========================================

The HTTP backend speaks the OpenAI-compatible wire format. An httpx mock
transport stands in for the server so we can see the request it sends and
how retries, caching and the request budget behave.
"""

import json
import os
import tempfile

import httpx

from weakrec.llm import Budget, BudgetExhausted, HttpBackend, ManagedBackend, ResponseCache

os.environ.setdefault("WEAKREC_API_KEY", "sk-demo")
attempts = []


def server(request):
    attempts.append(json.loads(request.content))
    if len(attempts) == 1:
        return httpx.Response(503)  # first call fails, the client retries
    return httpx.Response(200, json={"choices": [{"message": {"content": "1. Heat\n2. Dune"}}]})


backend = HttpBackend("https://llm.example/v1", "some-model", transport=httpx.MockTransport(server),
                      backoff=0.01)
print("request body:", json.dumps(backend.request_body("rank these"), indent=2))

managed = ManagedBackend(backend, ResponseCache(tempfile.mkdtemp()), Budget(max_requests=1))
print("answer:", managed.complete("rank these").replace("\n", " | "))
print("HTTP attempts:", len(attempts))
print("again (from cache):", managed.complete("rank these").replace("\n", " | "))
try:
    managed.complete("a different prompt")
except BudgetExhausted as exc:
    print("budget:", exc)
