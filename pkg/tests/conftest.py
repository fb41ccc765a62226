"""Shared fixtures: an in-process fake of an OpenAI-compatible server."""

import json
import re
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

API_KEY = "sk-test-0123456789abcdef"
_TARGET_RE = re.compile(r"^Sentence: (.*)$", re.MULTILINE)


class FakeServer:
    """Answers /chat/completions and /embeddings.

    Chat replies come from ``answers`` (keyed by the target sentence of a
    few-shot prompt, or by the whole prompt), falling back to echoing the
    target untagged. ``script`` is a list of HTTP statuses returned, one per
    request, before normal service resumes. Concurrency is instrumented.
    """

    def __init__(self):
        self.answers: dict[str, str] = {}
        self.script: list[int] = []
        self.malformed = False
        self.delay = 0.0
        self.requests: list[dict] = []
        self.in_flight = 0
        self.max_in_flight = 0
        self.lock = threading.Lock()
        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), self._handler())
        self.httpd.daemon_threads = True
        self.thread = threading.Thread(target=self.httpd.serve_forever, kwargs={"poll_interval": 0.02}, daemon=True)

    @property
    def base_url(self):
        return f"http://127.0.0.1:{self.httpd.server_address[1]}/v1"

    def reply_for(self, prompt: str) -> str:
        if prompt in self.answers:
            return self.answers[prompt]
        m = _TARGET_RE.search(prompt)
        target = m.group(1) if m else prompt
        return self.answers.get(target, target)

    def _handler(self):
        server = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def _send(self, status, body):
                data = body.encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                payload = json.loads(self.rfile.read(length) or b"{}")
                with server.lock:
                    server.requests.append({"path": self.path, "payload": payload, "headers": dict(self.headers)})
                    server.in_flight += 1
                    server.max_in_flight = max(server.max_in_flight, server.in_flight)
                    status = server.script.pop(0) if server.script else 200
                try:
                    if server.delay:
                        time.sleep(server.delay)
                    if self.headers.get("Authorization") != f"Bearer {API_KEY}":
                        return self._send(401, '{"error": "bad key"}')
                    if status != 200:
                        return self._send(status, '{"error": "scripted"}')
                    if server.malformed:
                        return self._send(200, "this is not json")
                    if self.path.endswith("/chat/completions"):
                        prompt = payload["messages"][-1]["content"]
                        body = {
                            "choices": [{"index": 0, "message": {"role": "assistant", "content": server.reply_for(prompt)}}],
                            "usage": {"prompt_tokens": len(prompt.split()), "completion_tokens": 1},
                        }
                        return self._send(200, json.dumps(body))
                    if self.path.endswith("/embeddings"):
                        data = [
                            {"index": i, "embedding": [float(len(t)), 3.0, 4.0]}
                            for i, t in enumerate(payload["input"])
                        ]
                        return self._send(200, json.dumps({"data": data}))
                    return self._send(404, '{"error": "not found"}')
                finally:
                    with server.lock:
                        server.in_flight -= 1

        return Handler

    def start(self):
        self.thread.start()
        return self

    def stop(self):
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture
def fake_server(monkeypatch):
    monkeypatch.setenv("CSK_API_KEY", API_KEY)
    srv = FakeServer().start()
    yield srv
    srv.stop()


# -- acceptance summary -----------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, name: str, status: str, detail: str = "") -> None:
    line = f"[{status}] criterion {number}: {name}" + (f" ({detail})" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
