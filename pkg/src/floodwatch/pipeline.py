"""Round scheduler: capture -> classify -> water level (flood cameras with a
detector configured) -> map update -> persist -> notify, on a fixed tick with
skip-on-overrun pacing."""

from __future__ import annotations

import json
import logging
import threading
import time
from collections import deque
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path

from .capture import run_round
from .classifier import (
    ClassifierBackend,
    SocketClassifierBackend,
    classify,
    stub_backend,
)
from .config import BackendConfig, PipelineConfig
from .frames import SceneClass
from .mapping import (
    MapState,
    SnapshotStore,
    refresh_interval,
    summary_report,
    update_map,
)
from .notify import Delivery, Notifier
from .registry import CameraRegistry, parse_registry_file
from .waterlevel import DetectorBackend, SocketDetectorBackend, best_estimate

log = logging.getLogger(__name__)

METRICS_FILE = "metrics.log"
DELIVERIES_FILE = "deliveries.log"
FRAMES_DIR = "frames"


@dataclass
class RoundMetrics:
    round_id: int
    capture_wall_ms: float
    classify_wall_ms: float
    map_wall_ms: float
    notify_wall_ms: float
    total_wall_ms: float
    failure_counts: dict[str, int]
    started_at: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, line: str) -> "RoundMetrics":
        return cls(**json.loads(line))


def _make_classifier(cfg: BackendConfig) -> ClassifierBackend:
    if cfg.kind == "socket":
        return SocketClassifierBackend(cfg.socket_path)
    return stub_backend()


def _make_detector(cfg: BackendConfig | None) -> DetectorBackend | None:
    if cfg is None:
        return None
    if cfg.kind == "socket":
        return SocketDetectorBackend(cfg.socket_path)
    return None


class Pipeline:
    """Owns the scheduler state: registry, backends, stores, round counter.

    Backends can be passed explicitly (tests, embedding); otherwise they are
    built from the config.
    """

    def __init__(
        self,
        config: PipelineConfig,
        registry: CameraRegistry | None = None,
        classifier_backend: ClassifierBackend | None = None,
        detector_backend: DetectorBackend | None = None,
    ):
        self.config = config
        self.registry = registry if registry is not None else parse_registry_file(config.registry_path)
        if len(self.registry) == 0:
            raise ValueError("registry has no cameras")
        self.classifier = classifier_backend or _make_classifier(config.classifier)
        self._classify_lock = (
            threading.Lock() if not getattr(self.classifier, "thread_safe", True) else None
        )
        self.detector = detector_backend if detector_backend is not None else _make_detector(config.detector)
        self.store = SnapshotStore(config.data_dir)
        self.notifier = Notifier(config.notification, Path(config.data_dir) / DELIVERIES_FILE)
        self.metrics_path = Path(config.data_dir) / METRICS_FILE
        self.metrics_history: deque[RoundMetrics] = deque(maxlen=1000)
        self._load_metrics()
        self.interval_s = refresh_interval(config.mode, config.interval_override_s)
        self.previous_state: MapState | None = self.store.latest()
        self._round_counter = self.previous_state.round_id if self.previous_state else 0
        self._round_active = threading.Lock()  # rounds never overlap

    def _load_metrics(self) -> None:
        if not self.metrics_path.exists():
            return
        for line in self.metrics_path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                try:
                    self.metrics_history.append(RoundMetrics.from_json(line))
                except (ValueError, TypeError):
                    log.warning("skipping malformed metrics line")

    def _classify_frame(self, frame: bytes):
        if self._classify_lock is not None:
            with self._classify_lock:
                return classify(self.classifier, frame)
        return classify(self.classifier, frame)

    def run_once(self) -> tuple[MapState, RoundMetrics, list[Delivery]]:
        """One complete round. Per-camera failures are values; anything that
        breaks a phase is logged and surfaces as an exception to the loop."""
        with self._round_active:
            self._round_counter += 1
            round_id = self._round_counter
            cfg = self.config
            t_start = time.monotonic()
            started_at = datetime.now(timezone.utc)

            spool_dir = Path(cfg.data_dir) / FRAMES_DIR if cfg.spool_frames else None
            round_result = run_round(self.registry, cfg.capture, round_id, spool_dir=spool_dir)
            t_cap = time.monotonic()

            frames = {
                tvid: res.outcome.data
                for tvid, res in round_result.results.items()
                if res.ok
            }
            labels = {tvid: self._classify_frame(data) for tvid, data in frames.items()}
            t_cls = time.monotonic()

            levels = {}
            if self.detector is not None:
                for tvid, label in labels.items():
                    if label.label is not SceneClass.FLOOD:
                        continue
                    try:
                        record = self.detector.detect(frames[tvid])
                    except Exception as exc:
                        log.warning("detector failed for %s: %s", tvid, exc)
                        continue
                    grade, estimate = best_estimate(
                        record, cfg.tire_spec, cfg.wheel_diameter_cm
                    )
                    if grade is not None:
                        levels[tvid] = (grade, estimate)

            frame_refs = (
                {tvid: f"{FRAMES_DIR}/{round_id}/{tvid}.jpg" for tvid in frames}
                if cfg.spool_frames
                else {}
            )
            state = update_map(
                self.registry, round_result, labels, levels=levels, frame_refs=frame_refs
            )
            self.store.save(state)
            t_map = time.monotonic()

            report = summary_report(state, cfg.map_url)
            deliveries: list[Delivery] = []
            if report.events and cfg.notification.enabled:
                deliveries = self.notifier.maybe_notify(self.previous_state, state, report)
            t_notify = time.monotonic()

            self.previous_state = state
            metrics = RoundMetrics(
                round_id=round_id,
                capture_wall_ms=(t_cap - t_start) * 1000.0,
                classify_wall_ms=(t_cls - t_cap) * 1000.0,
                map_wall_ms=(t_map - t_cls) * 1000.0,
                notify_wall_ms=(t_notify - t_map) * 1000.0,
                total_wall_ms=(t_notify - t_start) * 1000.0,
                failure_counts=round_result.failure_counts(),
                started_at=started_at.isoformat(),
            )
            if metrics.capture_wall_ms > cfg.capture.network_round_budget * 1000.0:
                log.warning(
                    "round %d capture took %.0f ms, over the %.0f s budget",
                    round_id, metrics.capture_wall_ms, cfg.capture.network_round_budget,
                )
            if metrics.total_wall_ms > cfg.capture.round_budget * 1000.0:
                log.warning(
                    "round %d took %.0f ms end to end, over the %.0f s budget",
                    round_id, metrics.total_wall_ms, cfg.capture.round_budget,
                )
            self._record_metrics(metrics)
            return state, metrics, deliveries

    def _record_metrics(self, metrics: RoundMetrics) -> None:
        self.metrics_history.append(metrics)
        with self.metrics_path.open("a", encoding="utf-8") as fh:
            fh.write(metrics.to_json() + "\n")

    def run_forever(self, stop: threading.Event, on_round=None) -> None:
        """Fixed-tick loop: a round overrunning its interval delays, never
        overlaps, the next round; missed ticks are skipped, not queued."""
        origin = time.monotonic()
        next_tick = origin
        while not stop.is_set():
            try:
                state, metrics, deliveries = self.run_once()
                if on_round is not None:
                    on_round(state, metrics, deliveries)
            except Exception:
                log.exception("round failed; continuing")
            now = time.monotonic()
            while next_tick <= now:
                next_tick += self.interval_s
            stop.wait(timeout=next_tick - now)
