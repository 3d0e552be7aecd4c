"""One capture round: fetch-and-decode a single frame from every registered
camera in parallel, under a per-stream deadline.

Every failure is a value (a typed ``Failure`` kind), never a round abort.
Successful captures are re-encoded to the pipeline's canonical format
(baseline JPEG, quality 85).
"""

from __future__ import annotations

import http.client
import io
import logging
import socket
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Union
from urllib.parse import urlsplit

from PIL import Image

from .registry import CameraRecord, CameraRegistry

log = logging.getLogger(__name__)

_CHUNK = 65536
_MAX_BODY = 64 * 1024 * 1024


class FailureKind(str, Enum):
    CONNECT_ERROR = "connect_error"
    TIMEOUT = "timeout"
    DECODE_ERROR = "decode_error"
    EMPTY_STREAM = "empty_stream"


@dataclass(frozen=True)
class Frame:
    data: bytes
    width: int
    height: int


@dataclass(frozen=True)
class Failure:
    kind: FailureKind
    detail: str = ""


@dataclass(frozen=True)
class CaptureResult:
    tvid: str
    outcome: Union[Frame, Failure]
    captured_at: datetime
    elapsed_ms: float

    @property
    def ok(self) -> bool:
        return isinstance(self.outcome, Frame)


@dataclass(frozen=True)
class CaptureConfig:
    pool_size: int = 256
    per_stream_deadline: float = 15.0
    network_round_budget: float = 60.0
    round_budget: float = 300.0
    grace: float = 2.0
    jpeg_quality: int = 85

    def __post_init__(self):
        if self.pool_size < 1:
            raise ValueError("pool_size must be >= 1")
        if self.per_stream_deadline <= 0 or self.network_round_budget <= 0 or self.round_budget <= 0:
            raise ValueError("deadlines must be > 0")


@dataclass
class RoundResult:
    round_id: int
    results: dict[str, CaptureResult]
    started_at: datetime
    finished_at: datetime
    peak_in_flight: int = 0

    @property
    def wall_ms(self) -> float:
        return (self.finished_at - self.started_at).total_seconds() * 1000.0

    def failure_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for res in self.results.values():
            if not res.ok:
                kind = res.outcome.kind.value
                counts[kind] = counts.get(kind, 0) + 1
        return counts


class _DeadlineExceeded(Exception):
    pass


class _DecodeFailed(Exception):
    pass


class _Budget:
    def __init__(self, deadline: float):
        self._start = time.monotonic()
        self._deadline = deadline

    def remaining(self) -> float:
        left = self._deadline - (time.monotonic() - self._start)
        if left <= 0:
            raise _DeadlineExceeded()
        return left

    @property
    def elapsed(self) -> float:
        return time.monotonic() - self._start


def _read_budgeted(
    resp: http.client.HTTPResponse, n: int, budget: _Budget, sock: socket.socket | None
) -> bytes:
    remaining = budget.remaining()
    if resp.isclosed():
        return b""
    if sock is not None:
        try:
            sock.settimeout(remaining)
        except OSError:
            return b""
    # read1, not read: a multipart stream has no Content-Length, and read(n)
    # would block until n bytes arrive instead of returning what is available
    return resp.read1(n)


def _parse_boundary(content_type: str) -> bytes | None:
    for part in content_type.split(";"):
        part = part.strip()
        if part.lower().startswith("boundary="):
            return part[len("boundary="):].strip('"').encode("latin-1")
    return None


def _first_multipart_frame(
    resp, boundary: bytes, budget: _Budget, sock: socket.socket | None
) -> bytes | None:
    """Extract the first complete part body. Uses the part's Content-Length
    when present, otherwise scans for the next boundary delimiter."""
    marker = b"--" + boundary
    buf = bytearray()
    header_end = -1
    while header_end < 0:
        chunk = _read_budgeted(resp, _CHUNK, budget, sock)
        if not chunk:
            return None
        buf += chunk
        start = buf.find(marker)
        if start >= 0:
            header_end = buf.find(b"\r\n\r\n", start)
            if header_end < 0 and len(buf) - start > 16384:
                return None
            if header_end < 0:
                header_end = -1  # keep reading headers
                continue
            body_start = header_end + 4
            part_headers = bytes(buf[start:header_end]).decode("latin-1", "replace")
            length = None
            for line in part_headers.split("\r\n"):
                if line.lower().startswith("content-length:"):
                    try:
                        length = int(line.split(":", 1)[1].strip())
                    except ValueError:
                        pass
            if length is not None:
                while len(buf) < body_start + length:
                    chunk = _read_budgeted(resp, _CHUNK, budget, sock)
                    if not chunk:
                        break
                    buf += chunk
                return bytes(buf[body_start : body_start + length]) or None
            # no length: body runs to the next boundary delimiter
            while True:
                nxt = buf.find(b"\r\n" + marker, body_start)
                if nxt >= 0:
                    return bytes(buf[body_start:nxt]) or None
                chunk = _read_budgeted(resp, _CHUNK, budget, sock)
                if not chunk:
                    partial = bytes(buf[body_start:])
                    return partial or None
                buf += chunk
        elif len(buf) > _MAX_BODY:
            return None
    return None


def _decode_and_reencode(data: bytes, quality: int) -> Frame:
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
        if img.mode != "RGB":
            img = img.convert("RGB")
        width, height = img.size
        out = io.BytesIO()
        img.save(out, "JPEG", quality=quality)
    except Exception as exc:
        raise _DecodeFailed(str(exc) or exc.__class__.__name__) from None
    return Frame(data=out.getvalue(), width=width, height=height)


def capture_one(camera: CameraRecord, deadline: float, jpeg_quality: int = 85) -> CaptureResult:
    """Fetch one frame from a camera URL within the deadline.

    Handles single-image responses and multipart motion streams (first
    complete part wins). Resources are released regardless of outcome.
    """
    budget = _Budget(deadline)
    parts = urlsplit(camera.url)
    conn_cls = http.client.HTTPSConnection if parts.scheme == "https" else http.client.HTTPConnection
    conn = None
    body = b""
    outcome: Union[Frame, Failure]
    try:
        conn = conn_cls(parts.hostname, parts.port, timeout=budget.remaining())
        path = parts.path or "/"
        if parts.query:
            path += "?" + parts.query
        conn.request("GET", path, headers={"Accept": "*/*"})
        sock = conn.sock
        sock.settimeout(budget.remaining())
        resp = conn.getresponse()
        if not 200 <= resp.status < 300:
            outcome = Failure(FailureKind.EMPTY_STREAM, f"http status {resp.status}")
        else:
            ctype = resp.headers.get("Content-Type", "")
            if ctype.lower().startswith("multipart/"):
                boundary = _parse_boundary(ctype)
                if boundary is None:
                    outcome = Failure(FailureKind.DECODE_ERROR, "multipart without boundary")
                else:
                    part = _first_multipart_frame(resp, boundary, budget, sock)
                    if part is None:
                        outcome = Failure(FailureKind.EMPTY_STREAM, "no frame in stream")
                    else:
                        body = part
                        outcome = _decode_and_reencode(body, jpeg_quality)
            else:
                chunks = []
                total = 0
                while total < _MAX_BODY:
                    chunk = _read_budgeted(resp, _CHUNK, budget, sock)
                    if not chunk:
                        break
                    chunks.append(chunk)
                    total += len(chunk)
                body = b"".join(chunks)
                if not body:
                    outcome = Failure(FailureKind.EMPTY_STREAM, "zero-length body")
                else:
                    outcome = _decode_and_reencode(body, jpeg_quality)
    except _DeadlineExceeded:
        outcome = Failure(FailureKind.TIMEOUT, f"deadline {deadline}s exceeded")
    except (socket.timeout, TimeoutError):
        outcome = Failure(FailureKind.TIMEOUT, f"deadline {deadline}s exceeded")
    except _DecodeFailed as exc:
        outcome = Failure(FailureKind.DECODE_ERROR, str(exc))
    except http.client.IncompleteRead as exc:
        try:
            outcome = _decode_and_reencode(body + (exc.partial or b""), jpeg_quality)
        except _DecodeFailed:
            outcome = Failure(FailureKind.DECODE_ERROR, "incomplete read")
    except (ConnectionError, http.client.BadStatusLine) as exc:
        if body:
            outcome = Failure(FailureKind.DECODE_ERROR, f"connection lost mid-body: {exc}")
        else:
            outcome = Failure(FailureKind.CONNECT_ERROR, str(exc) or exc.__class__.__name__)
    except OSError as exc:
        outcome = Failure(FailureKind.CONNECT_ERROR, str(exc) or exc.__class__.__name__)
    except Exception as exc:  # keep failures values even for surprises
        log.warning("unexpected capture failure for %s", camera.tvid, exc_info=True)
        outcome = Failure(FailureKind.DECODE_ERROR, f"unexpected: {exc}")
    finally:
        if conn is not None:
            try:
                conn.close()
            except Exception:
                pass
    return CaptureResult(
        tvid=camera.tvid,
        outcome=outcome,
        captured_at=datetime.now(timezone.utc),
        elapsed_ms=budget.elapsed * 1000.0,
    )


class _InFlightGauge:
    def __init__(self):
        self._lock = threading.Lock()
        self.current = 0
        self.peak = 0

    def __enter__(self):
        with self._lock:
            self.current += 1
            self.peak = max(self.peak, self.current)
        return self

    def __exit__(self, *exc):
        with self._lock:
            self.current -= 1


def run_round(
    registry: CameraRegistry,
    config: CaptureConfig,
    round_id: int = 0,
    spool_dir: str | Path | None = None,
) -> RoundResult:
    """Capture every registered camera exactly once, at most pool_size in
    flight. The round completes even if every capture fails."""
    if len(registry) == 0:
        raise ValueError("registry is empty")
    started_at = datetime.now(timezone.utc)
    gauge = _InFlightGauge()

    spool_round: Path | None = None
    if spool_dir is not None:
        spool_round = Path(spool_dir) / str(round_id)
        spool_round.mkdir(parents=True, exist_ok=True)

    def work(camera: CameraRecord) -> CaptureResult:
        with gauge:
            result = capture_one(camera, config.per_stream_deadline, config.jpeg_quality)
            if spool_round is not None and result.ok:
                try:
                    (spool_round / f"{camera.tvid}.jpg").write_bytes(result.outcome.data)
                except OSError:
                    log.warning("could not spool frame for %s", camera.tvid)
            return result

    with ThreadPoolExecutor(max_workers=config.pool_size) as pool:
        futures = {rec.tvid: pool.submit(work, rec) for rec in registry}
        results = {tvid: fut.result() for tvid, fut in futures.items()}

    return RoundResult(
        round_id=round_id,
        results=results,
        started_at=started_at,
        finished_at=datetime.now(timezone.utc),
        peak_in_flight=gauge.peak,
    )


def measure_pool_sweep(
    registry: CameraRegistry,
    pool_sizes: list[int],
    config: CaptureConfig | None = None,
) -> list[tuple[int, float]]:
    """Round wall time per worker-pool size, same fleet for every row."""
    base = config or CaptureConfig()
    rows: list[tuple[int, float]] = []
    for size in pool_sizes:
        cfg = replace(base, pool_size=size)
        t0 = time.monotonic()
        run_round(registry, cfg)
        rows.append((size, time.monotonic() - t0))
    return rows
