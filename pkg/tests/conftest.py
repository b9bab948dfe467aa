from __future__ import annotations

import hashlib
import json
import threading
from collections import Counter
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"

# --- acceptance summary ------------------------------------------------------

_ACCEPTANCE: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_a" not in report.nodeid:
        return
    name = report.nodeid.split("::test_", 1)[1]
    criterion = name.split("_", 1)[0].upper()
    if report.when == "call" or report.outcome != "passed":
        prev = _ACCEPTANCE.get(criterion)
        if prev != "FAIL":
            _ACCEPTANCE[criterion] = "PASS" if report.outcome == "passed" else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(_ACCEPTANCE, key=lambda c: int(c[1:])):
        terminalreporter.write_line(f"{criterion}: {_ACCEPTANCE[criterion]}")


# --- stub chat-completions server -------------------------------------------

class StubState:
    """Answers deterministically from the request body.

    ``fail_first[n]`` makes the first ``n`` attempts of every distinct request
    fail with ``fail_status``.  ``malformed`` returns a body without content.
    """

    def __init__(self):
        self.fail_first = 0
        self.fail_status = 429
        self.malformed = False
        self.seen: Counter = Counter()
        self.requests: list[dict] = []
        self.headers: list[dict] = []
        self.lock = threading.Lock()


def _answer_for(body: dict) -> str:
    prompt = body["messages"][-1]["content"].rsplit("\n\n", 1)[-1]
    digest = hashlib.sha256(body["messages"][-1]["content"].encode()).hexdigest()[:8]
    return f"Observed for '{prompt[:40]}' ({digest})."


def _handler(state: StubState):
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *args):
            pass

        def _send(self, status: int, payload: dict | str):
            data = payload if isinstance(payload, str) else json.dumps(payload)
            raw = data.encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(raw)))
            self.end_headers()
            self.wfile.write(raw)

        def do_POST(self):
            if self.path != "/v1/chat/completions":
                return self._send(404, {"error": "not found"})
            body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
            key = json.dumps(body, sort_keys=True)
            with state.lock:
                state.seen[key] += 1
                attempt = state.seen[key]
                state.requests.append(body)
                state.headers.append(dict(self.headers))
            if attempt <= state.fail_first:
                return self._send(state.fail_status, {"error": {"message": "rate limited"}})
            if state.malformed:
                return self._send(200, {"choices": [{"message": {"role": "assistant"}}]})
            self._send(200, {"choices": [{"index": 0, "message": {"role": "assistant",
                                                                  "content": _answer_for(body)}}]})

    return Handler


@pytest.fixture
def stub_server():
    state = StubState()
    server = ThreadingHTTPServer(("127.0.0.1", 0), _handler(state))
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    state.url = f"http://127.0.0.1:{server.server_address[1]}"
    try:
        yield state
    finally:
        server.shutdown()
        server.server_close()


@pytest.fixture
def fixtures() -> Path:
    return FIXTURES
