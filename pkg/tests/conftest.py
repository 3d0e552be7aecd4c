from __future__ import annotations

import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from floodwatch.simulator import SimScenario, spawn_fleet


@pytest.fixture
def make_fleet():
    """Factory that spawns fleets and guarantees teardown."""
    handles = []

    def _spawn(scenario: SimScenario):
        handle = spawn_fleet(scenario)
        handles.append(handle)
        return handle

    yield _spawn
    for handle in handles:
        handle.stop()


class WebhookSink:
    """Records POSTed payloads; per-path status overrides for failure tests."""

    def __init__(self):
        self.requests: list[tuple[str, str | None, bytes]] = []
        self.status_for_path: dict[str, int] = {}
        sink = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = self.rfile.read(length)
                sink.requests.append(
                    (self.path, self.headers.get("X-Floodwatch-Round"), body)
                )
                status = sink.status_for_path.get(self.path, 200)
                self.send_response(status)
                self.send_header("Content-Length", "0")
                self.end_headers()

            def log_message(self, *args):
                pass

        self._httpd = HTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()

    def url(self, path: str = "/hook") -> str:
        return f"http://127.0.0.1:{self._httpd.server_address[1]}{path}"

    def stop(self):
        self._httpd.shutdown()
        self._httpd.server_close()


@pytest.fixture
def webhook_sink():
    sink = WebhookSink()
    yield sink
    sink.stop()
