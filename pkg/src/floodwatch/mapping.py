"""Fold per-round classifications into a geo-referenced map state, emit
GeoJSON (RFC 7946), and build the flood-only summary report numbered north
to south by latitude."""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path

from .capture import RoundResult
from .classifier import ClassProbabilities, SceneLabel
from .frames import SceneClass
from .registry import CameraRegistry
from .waterlevel import Grade, WaterLevelEstimate

log = logging.getLogger(__name__)


class InconsistentRoundError(Exception):
    """A successful capture arrived without a label: a pipeline bug."""


class Status(str, Enum):
    FLOOD = "flood"
    NORMAL = "normal"
    UNKNOWN = "unknown"
    NO_VIDEO = "no_video"


STATUS_COLORS = {
    Status.FLOOD: "red",
    Status.NORMAL: "green",
    Status.UNKNOWN: "gray",
    Status.NO_VIDEO: "white",
}

_LABEL_TO_STATUS = {
    SceneClass.FLOOD: Status.FLOOD,
    SceneClass.NORMAL: Status.NORMAL,
    SceneClass.UNKNOWN: Status.UNKNOWN,
}


class Mode(str, Enum):
    STORM_ADVISORY = "storm_advisory"
    NORMAL = "normal"


STORM_ADVISORY_INTERVAL_S = 300
NORMAL_INTERVAL_S = 3600


def refresh_interval(mode: Mode | str, override: int | None = None) -> int:
    """Seconds between rounds: 5 min during storm advisories, an hour
    otherwise, either overridable by config."""
    if override is not None:
        return int(override)
    mode = Mode(mode)
    return STORM_ADVISORY_INTERVAL_S if mode is Mode.STORM_ADVISORY else NORMAL_INTERVAL_S


@dataclass(frozen=True)
class CameraStatus:
    tvid: str
    status: Status
    longitude: float
    latitude: float
    roadsection: str
    observed_at: datetime | None = None
    probabilities: ClassProbabilities | None = None
    water_level: WaterLevelEstimate | None = None
    water_grade: Grade | None = None
    frame_ref: str | None = None

    @property
    def color(self) -> str:
        return STATUS_COLORS[self.status]


@dataclass
class MapState:
    round_id: int
    statuses: dict[str, CameraStatus]
    generated_at: datetime

    def flood_tvids(self) -> frozenset[str]:
        return frozenset(t for t, s in self.statuses.items() if s.status is Status.FLOOD)

    def status_counts(self) -> dict[Status, int]:
        counts = {status: 0 for status in Status}
        for cam in self.statuses.values():
            counts[cam.status] += 1
        return counts


def update_map(
    registry: CameraRegistry,
    round_result: RoundResult,
    labels: dict[str, SceneLabel],
    levels: dict[str, tuple[Grade | None, WaterLevelEstimate | None]] | None = None,
    frame_refs: dict[str, str] | None = None,
    generated_at: datetime | None = None,
) -> MapState:
    """Pure fold of one round into a complete map state: failed captures are
    NoVideo, everything else mirrors its scene label. Prior state is fully
    replaced."""
    levels = levels or {}
    frame_refs = frame_refs or {}
    statuses: dict[str, CameraStatus] = {}
    for record in registry:
        result = round_result.results.get(record.tvid)
        if result is None or not result.ok:
            statuses[record.tvid] = CameraStatus(
                tvid=record.tvid,
                status=Status.NO_VIDEO,
                longitude=record.longitude,
                latitude=record.latitude,
                roadsection=record.roadsection,
                observed_at=result.captured_at if result else None,
            )
            continue
        label = labels.get(record.tvid)
        if label is None:
            raise InconsistentRoundError(
                f"camera {record.tvid!r} captured successfully but has no label"
            )
        water_grade, estimate = levels.get(record.tvid, (None, None))
        statuses[record.tvid] = CameraStatus(
            tvid=record.tvid,
            status=_LABEL_TO_STATUS[label.label],
            longitude=record.longitude,
            latitude=record.latitude,
            roadsection=record.roadsection,
            observed_at=result.captured_at,
            probabilities=label.probabilities,
            water_level=estimate,
            water_grade=water_grade,
            frame_ref=frame_refs.get(record.tvid),
        )
    return MapState(
        round_id=round_result.round_id,
        statuses=statuses,
        generated_at=generated_at or datetime.now(timezone.utc),
    )


# -- GeoJSON ------------------------------------------------------------------


def _probabilities_doc(probs: ClassProbabilities | None) -> dict | None:
    if probs is None:
        return None
    return {"normal": probs.p_normal, "flood": probs.p_flood, "unknown": probs.p_unknown}


def _water_level_doc(est: WaterLevelEstimate | None) -> dict | None:
    if est is None:
        return None
    return {
        "flood_fraction": est.flood_fraction,
        "depth_cm": est.depth_cm,
        "wheel_diameter_cm": est.wheel_diameter_cm,
        "grade": est.grade.value,
        "compensation": est.compensation,
    }


def camera_feature(cam: CameraStatus) -> dict:
    """One camera as a GeoJSON Point feature, coordinates in [lon, lat] order."""
    return {
        "type": "Feature",
        "geometry": {
            "type": "Point",
            "coordinates": [cam.longitude, cam.latitude],
        },
        "properties": {
            "tvid": cam.tvid,
            "status": cam.status.value,
            "color": cam.color,
            "roadsection": cam.roadsection,
            "observed_at": cam.observed_at.isoformat() if cam.observed_at else None,
            "probabilities": _probabilities_doc(cam.probabilities),
            "water_level": _water_level_doc(cam.water_level),
            "water_grade": cam.water_grade.value if cam.water_grade else None,
            "frame_ref": cam.frame_ref,
        },
    }


def to_geojson(state: MapState) -> dict:
    """RFC 7946 FeatureCollection: one Point per camera. round_id and
    generated_at ride along as foreign members."""
    return {
        "type": "FeatureCollection",
        "round_id": state.round_id,
        "generated_at": state.generated_at.isoformat(),
        "features": [camera_feature(cam) for cam in state.statuses.values()],
    }


def geojson_text(state: MapState) -> str:
    return json.dumps(to_geojson(state), ensure_ascii=False, separators=(",", ":"))


def parse_geojson(doc: str | dict) -> MapState:
    """Inverse of to_geojson; used for crash-restart from a persisted round."""
    if isinstance(doc, str):
        doc = json.loads(doc)
    statuses: dict[str, CameraStatus] = {}
    for feature in doc["features"]:
        props = feature["properties"]
        lon, lat = feature["geometry"]["coordinates"]
        probs_doc = props.get("probabilities")
        probs = (
            ClassProbabilities(probs_doc["normal"], probs_doc["flood"], probs_doc["unknown"])
            if probs_doc
            else None
        )
        wl_doc = props.get("water_level")
        water_level = (
            WaterLevelEstimate(
                flood_fraction=wl_doc["flood_fraction"],
                depth_cm=wl_doc["depth_cm"],
                wheel_diameter_cm=wl_doc["wheel_diameter_cm"],
                grade=Grade(wl_doc["grade"]),
                compensation=wl_doc["compensation"],
            )
            if wl_doc
            else None
        )
        observed = props.get("observed_at")
        statuses[props["tvid"]] = CameraStatus(
            tvid=props["tvid"],
            status=Status(props["status"]),
            longitude=lon,
            latitude=lat,
            roadsection=props.get("roadsection", ""),
            observed_at=datetime.fromisoformat(observed) if observed else None,
            probabilities=probs,
            water_level=water_level,
            water_grade=Grade(props["water_grade"]) if props.get("water_grade") else None,
            frame_ref=props.get("frame_ref"),
        )
    return MapState(
        round_id=int(doc["round_id"]),
        statuses=statuses,
        generated_at=datetime.fromisoformat(doc["generated_at"]),
    )


# -- summary report -----------------------------------------------------------


@dataclass(frozen=True)
class FloodEvent:
    event_number: int
    tvid: str
    latitude: float
    longitude: float
    roadsection: str
    frame_ref: str | None
    probabilities: ClassProbabilities | None


@dataclass(frozen=True)
class SummaryReport:
    round_id: int
    events: tuple[FloodEvent, ...]
    map_url: str
    generated_at: datetime


def summary_report(state: MapState, map_url: str) -> SummaryReport:
    """Flood-only events, numbered 1..n from north to south (descending
    latitude; ties by ascending longitude, then tvid)."""
    floods = [cam for cam in state.statuses.values() if cam.status is Status.FLOOD]
    floods.sort(key=lambda cam: (-cam.latitude, cam.longitude, cam.tvid))
    events = tuple(
        FloodEvent(
            event_number=i + 1,
            tvid=cam.tvid,
            latitude=cam.latitude,
            longitude=cam.longitude,
            roadsection=cam.roadsection,
            frame_ref=cam.frame_ref,
            probabilities=cam.probabilities,
        )
        for i, cam in enumerate(floods)
    )
    return SummaryReport(
        round_id=state.round_id,
        events=events,
        map_url=map_url,
        generated_at=state.generated_at,
    )


def report_document(report: SummaryReport) -> dict:
    return {
        "round_id": report.round_id,
        "map_url": report.map_url,
        "generated_at": report.generated_at.isoformat(),
        "events": [
            {
                "event_number": ev.event_number,
                "tvid": ev.tvid,
                "latitude": ev.latitude,
                "longitude": ev.longitude,
                "roadsection": ev.roadsection,
                "frame_ref": ev.frame_ref,
                "probabilities": _probabilities_doc(ev.probabilities),
            }
            for ev in report.events
        ],
    }


def report_text(report: SummaryReport) -> str:
    """Canonical serialization: same report content -> identical bytes."""
    return json.dumps(report_document(report), ensure_ascii=False, sort_keys=True, separators=(",", ":"))


# -- persistence ----------------------------------------------------------------


class SnapshotStore:
    """One GeoJSON document per round under rounds/, with rolling retention
    (default 288, about one day at 5-minute rounds)."""

    def __init__(self, data_dir: str | Path, retention: int = 288):
        self.rounds_dir = Path(data_dir) / "rounds"
        self.rounds_dir.mkdir(parents=True, exist_ok=True)
        self.retention = retention

    def path_for(self, round_id: int) -> Path:
        return self.rounds_dir / f"{round_id}.geojson"

    def save(self, state: MapState) -> Path:
        path = self.path_for(state.round_id)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(geojson_text(state), encoding="utf-8")
        os.replace(tmp, path)
        self._prune()
        return path

    def _prune(self) -> None:
        snapshots = sorted(
            (p for p in self.rounds_dir.glob("*.geojson")),
            key=lambda p: int(p.stem),
        )
        for stale in snapshots[: max(0, len(snapshots) - self.retention)]:
            try:
                stale.unlink()
            except OSError:
                log.warning("could not prune snapshot %s", stale)

    def round_ids(self) -> list[int]:
        return sorted(int(p.stem) for p in self.rounds_dir.glob("*.geojson"))

    def latest(self) -> MapState | None:
        ids = self.round_ids()
        if not ids:
            return None
        return parse_geojson(self.path_for(ids[-1]).read_text(encoding="utf-8"))
