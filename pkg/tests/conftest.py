from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest


class _Handler(BaseHTTPRequestHandler):
    def do_POST(self):  # noqa: N802
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length) or b"{}")
        server = self.server
        server.requests.append({"path": self.path, "body": body, "headers": dict(self.headers)})
        status, payload = server.responder(self.path, body)
        data = json.dumps(payload).encode() if not isinstance(payload, bytes) else payload
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def http_server():
    """Local JSON server; set ``server.responder = fn(path, body) -> (status, payload)``."""
    server = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
    server.requests = []
    server.responder = lambda path, body: (404, {})
    server.url = f"http://127.0.0.1:{server.server_address[1]}"
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield server
    server.shutdown()
    server.server_close()


# -- acceptance reporting ----------------------------------------------------

_CRITERIA: dict = {}


@pytest.fixture
def criterion(request):
    """``record(number, detail)`` attaches a measurement line to an acceptance test."""

    def record(number: int, detail: str = "") -> None:
        _CRITERIA.setdefault(request.node.nodeid, {})["number"] = number
        _CRITERIA[request.node.nodeid]["detail"] = detail

    return record


def pytest_runtest_logreport(report):
    if "test_acceptance" in report.nodeid and report.when == "call":
        _CRITERIA.setdefault(report.nodeid, {})["outcome"] = report.outcome


def pytest_terminal_summary(terminalreporter):
    rows = [v for v in _CRITERIA.values() if "outcome" in v and "number" in v]
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for row in sorted(rows, key=lambda r: r["number"]):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}.get(row["outcome"], row["outcome"].upper())
        terminalreporter.write_line(f"criterion {row['number']:>2}: {status}  {row['detail']}")
