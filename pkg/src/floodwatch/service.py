"""Read-only HTTP API over the latest map state.

    GET /map.geojson    latest round as a GeoJSON FeatureCollection
    GET /events         latest flood-only summary report
    GET /camera/{tvid}  one camera's current status
    GET /metrics        round metrics history
    GET /healthz        liveness

Readers always see a complete round: the pipeline swaps in a finished
(state, report) pair atomically."""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import asdict
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import unquote

from .mapping import MapState, SummaryReport, camera_feature, geojson_text, report_text

log = logging.getLogger(__name__)


class StateBox:
    """Latest complete (MapState, SummaryReport) plus metrics supplier."""

    def __init__(self, metrics_supplier=None):
        self._lock = threading.Lock()
        self._state: MapState | None = None
        self._report: SummaryReport | None = None
        self._metrics_supplier = metrics_supplier or (lambda: [])

    def update(self, state: MapState, report: SummaryReport) -> None:
        with self._lock:
            self._state = state
            self._report = report

    def snapshot(self) -> tuple[MapState | None, SummaryReport | None]:
        with self._lock:
            return self._state, self._report

    def metrics(self) -> list:
        return list(self._metrics_supplier())


class _Handler(BaseHTTPRequestHandler):
    server_version = "floodwatch"

    def log_message(self, fmt, *args):  # quiet by default
        log.debug("api: " + fmt, *args)

    def _send(self, status: int, body: bytes, content_type: str = "application/json"):
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _send_json(self, status: int, doc) -> None:
        self._send(status, json.dumps(doc).encode("utf-8"))

    def do_GET(self):  # noqa: N802 (stdlib naming)
        box: StateBox = self.server.box  # type: ignore[attr-defined]
        path = unquote(self.path.split("?")[0])
        state, report = box.snapshot()

        if path == "/healthz":
            self._send_json(200, {"ok": True})
        elif path == "/map.geojson":
            if state is None:
                self._send_json(503, {"error": "no snapshot yet"})
            else:
                self._send(200, geojson_text(state).encode("utf-8"), "application/geo+json")
        elif path == "/events":
            if report is None:
                self._send_json(503, {"error": "no snapshot yet"})
            else:
                self._send(200, report_text(report).encode("utf-8"))
        elif path == "/metrics":
            self._send_json(
                200, [m if isinstance(m, dict) else asdict(m) for m in box.metrics()]
            )
        elif path.startswith("/camera/"):
            tvid = path[len("/camera/") :]
            if state is None:
                self._send_json(503, {"error": "no snapshot yet"})
                return
            cam = state.statuses.get(tvid)
            if cam is None:
                self._send_json(404, {"error": f"unknown camera {tvid!r}"})
                return
            feature = camera_feature(cam)
            doc = dict(feature["properties"])
            doc["longitude"], doc["latitude"] = feature["geometry"]["coordinates"]
            self._send_json(200, doc)
        else:
            self._send_json(404, {"error": "no such resource"})


class ApiServer:
    def __init__(self, host: str, port: int, box: StateBox):
        self._httpd = ThreadingHTTPServer((host, port), _Handler)
        self._httpd.daemon_threads = True
        self._httpd.box = box  # type: ignore[attr-defined]
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        return self._httpd.server_address[0], self._httpd.server_address[1]

    @property
    def url(self) -> str:
        host, port = self.address
        return f"http://{host}:{port}"

    def start(self) -> "ApiServer":
        self._thread = threading.Thread(
            target=self._httpd.serve_forever, daemon=True, name="floodwatch-api"
        )
        self._thread.start()
        return self

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=10)

    def __enter__(self) -> "ApiServer":
        return self

    def __exit__(self, *exc) -> None:
        self.stop()
