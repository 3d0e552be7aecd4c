"""Pipeline configuration: JSON file plus environment overrides
(FLOODWATCH_MODE, FLOODWATCH_LISTEN)."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .capture import CaptureConfig
from .mapping import Mode
from .notify import NotificationPolicy, NotifyMode, PolicyError
from .waterlevel import DEFAULT_TIRE, TireSpec, parse_tire_marking

MODE_ENV = "FLOODWATCH_MODE"
LISTEN_ENV = "FLOODWATCH_LISTEN"

MIN_INTERVAL_OVERRIDE_S = 60


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class BackendConfig:
    kind: str  # "stub" | "socket"
    socket_path: str | None = None

    def __post_init__(self):
        if self.kind not in ("stub", "socket"):
            raise ConfigError(f"unknown backend kind {self.kind!r}")
        if self.kind == "socket" and not self.socket_path:
            raise ConfigError("socket backend needs a socket path")


@dataclass(frozen=True)
class PipelineConfig:
    registry_path: Path
    data_dir: Path
    listen_address: str = "127.0.0.1:8080"
    mode: Mode = Mode.STORM_ADVISORY
    interval_override_s: int | None = None
    capture: CaptureConfig = field(default_factory=CaptureConfig)
    spool_frames: bool = True
    classifier: BackendConfig = field(default_factory=lambda: BackendConfig("stub"))
    detector: BackendConfig | None = None
    tire_spec: TireSpec = DEFAULT_TIRE
    wheel_diameter_cm: float | None = None
    map_url: str = "http://127.0.0.1:8080/map.geojson"
    notification: NotificationPolicy = field(
        default_factory=lambda: NotificationPolicy(enabled=False, recipients=())
    )

    def __post_init__(self):
        if self.interval_override_s is not None and self.interval_override_s < MIN_INTERVAL_OVERRIDE_S:
            raise ConfigError(f"interval_override_s must be >= {MIN_INTERVAL_OVERRIDE_S}")

    def listen_host_port(self) -> tuple[str, int]:
        host, _, port = self.listen_address.rpartition(":")
        if not host or not port.isdigit():
            raise ConfigError(f"listen address {self.listen_address!r} is not host:port")
        return host, int(port)


def _backend_from_doc(doc: dict | None, default_stub: bool) -> BackendConfig | None:
    if doc is None:
        return BackendConfig("stub") if default_stub else None
    kind = doc.get("backend", "stub")
    return BackendConfig(kind=kind, socket_path=doc.get("path"))


def load_config(path: str | Path, env: dict[str, str] | None = None) -> PipelineConfig:
    """Load and validate. Referenced paths must exist at startup; the data
    directory is created if missing."""
    env = env if env is not None else dict(os.environ)
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file {path} does not exist") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc.msg}") from None

    try:
        registry_path = Path(doc["registry"])
    except KeyError:
        raise ConfigError("config lacks 'registry'") from None
    if not registry_path.is_absolute():
        registry_path = path.parent / registry_path
    if not registry_path.exists():
        raise ConfigError(f"registry path {registry_path} does not exist")

    data_dir = Path(doc.get("data_dir", "data"))
    if not data_dir.is_absolute():
        data_dir = path.parent / data_dir
    data_dir.mkdir(parents=True, exist_ok=True)

    try:
        mode = Mode(env.get(MODE_ENV) or doc.get("mode", "storm_advisory"))
        listen = env.get(LISTEN_ENV) or doc.get("listen", "127.0.0.1:8080")

        cap_doc = doc.get("capture", {})
        capture = CaptureConfig(
            pool_size=int(cap_doc.get("pool_size", 256)),
            per_stream_deadline=float(cap_doc.get("per_stream_deadline_s", 15.0)),
            network_round_budget=float(cap_doc.get("network_round_budget_s", 60.0)),
            round_budget=float(cap_doc.get("round_budget_s", 300.0)),
            jpeg_quality=int(cap_doc.get("jpeg_quality", 85)),
        )

        notif_doc = doc.get("notification", {})
        notification = NotificationPolicy(
            mode=NotifyMode(notif_doc.get("mode", "on_change")),
            min_gap_s=float(notif_doc.get("min_gap_s", 300.0)),
            recipients=tuple(notif_doc.get("recipients", ())),
            enabled=bool(notif_doc.get("enabled", bool(notif_doc.get("recipients")))),
            timeout_s=float(notif_doc.get("timeout_s", 10.0)),
        )

        tire = doc.get("tire_marking")
        interval = doc.get("interval_override_s")
        return PipelineConfig(
            registry_path=registry_path,
            data_dir=data_dir,
            listen_address=listen,
            mode=mode,
            interval_override_s=int(interval) if interval is not None else None,
            capture=capture,
            spool_frames=bool(doc.get("spool_frames", True)),
            classifier=_backend_from_doc(doc.get("classifier"), default_stub=True),
            detector=_backend_from_doc(doc.get("detector"), default_stub=False),
            tire_spec=parse_tire_marking(tire) if tire else DEFAULT_TIRE,
            wheel_diameter_cm=doc.get("wheel_diameter_cm"),
            map_url=doc.get("map_url", f"http://{listen}/map.geojson"),
            notification=notification,
        )
    except (PolicyError, ValueError, TypeError) as exc:
        raise ConfigError(f"bad configuration: {exc}") from None
