"""Water-level estimation against a sedan wheel used as an in-scene ruler.

The wheel diameter comes straight off the sidewall marking (e.g. 215/60R16:
width 215 mm, sidewall 60% of width, rim 16 in):

    diameter_cm = rim_in * 2.54 + 2 * (width_mm / 10) * (aspect_pct / 100)

The flood fraction is the submerged share of the wheel's pixel height,
computed either from the waterline row inside the wheel box or from the
visible (dry) extent of a segmentation mask; depth in cm is fraction times
wheel diameter.

Detections are inputs, not computed here: the per-frame detection record
format (and the backend interface that delivers it) is the bridge any real
detector must speak.
"""

from __future__ import annotations

import json
import re
import socket
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Protocol, runtime_checkable

from .frames import read_tag

INCH_CM = 2.54

# Flooding above this share of the wheel triggers the rapid warning grade.
GRADING_THRESHOLD = 1.0 / 3.0

# Depth strictly greater than this (cm) is the disaster-compensation basis.
COMPENSATION_DEPTH_CM = 50.0

# Wheels are expected in the bottom share of the vehicle box; a vehicle with
# no usable wheel there grades as exception (possibly fully submerged).
LOWER_BAND_FRACTION = 0.4

DETECTION_RECORD_VERSION = 1


class TireMarkingError(ValueError):
    """Sidewall marking string does not match width/aspect{letter}rim."""


class InsufficientObservation(Exception):
    """Wheel observation carries neither a waterline nor a mask extent."""


@dataclass(frozen=True)
class TireSpec:
    width_mm: float
    aspect_pct: float
    rim_in: float

    def __post_init__(self):
        if self.width_mm <= 0:
            raise ValueError("tire width must be > 0 mm")
        if not 0 < self.aspect_pct <= 100:
            raise ValueError("aspect ratio must be in (0, 100] percent")
        if self.rim_in <= 0:
            raise ValueError("rim diameter must be > 0 in")

    @classmethod
    def from_marking(cls, text: str) -> "TireSpec":
        return parse_tire_marking(text)


_MARKING_RE = re.compile(r"^\s*(\d+)\s*/\s*(\d+)\s*[A-Za-z]\s*(\d+)\s*$")


def parse_tire_marking(text: str) -> TireSpec:
    """Decompose a "215/60R16"-style marking into width, aspect ratio, rim."""
    match = _MARKING_RE.match(text)
    if match is None:
        raise TireMarkingError(f"unrecognized tire marking {text!r}")
    return TireSpec(
        width_mm=float(match.group(1)),
        aspect_pct=float(match.group(2)),
        rim_in=float(match.group(3)),
    )


DEFAULT_TIRE = TireSpec(width_mm=215.0, aspect_pct=60.0, rim_in=16.0)


def wheel_diameter(spec: TireSpec) -> float:
    """Full wheel diameter in cm: rim plus twice the sidewall height."""
    return spec.rim_in * INCH_CM + 2.0 * (spec.width_mm / 10.0) * (spec.aspect_pct / 100.0)


DEFAULT_WHEEL_DIAMETER_CM = wheel_diameter(DEFAULT_TIRE)  # 66.44


@dataclass(frozen=True)
class WheelObservation:
    """Pixel-row extent of one detected wheel. Rows grow downward; the
    waterline is the smallest row index of water inside the box."""

    tvid: str
    box_top_px: float
    box_bottom_px: float
    waterline_px: float | None = None
    visible_mask_rows: tuple[float, float] | None = None

    def __post_init__(self):
        if self.box_bottom_px <= self.box_top_px:
            raise ValueError("wheel box must have box_bottom_px > box_top_px")
        if self.waterline_px is not None and not (
            self.box_top_px <= self.waterline_px <= self.box_bottom_px
        ):
            raise ValueError("waterline_px must lie within the wheel box")
        if self.visible_mask_rows is not None:
            top, bottom = self.visible_mask_rows
            if bottom <= top:
                raise ValueError("visible_mask_rows must be (top, bottom) with bottom > top")

    @property
    def height_px(self) -> float:
        return self.box_bottom_px - self.box_top_px


def flood_fraction(obs: WheelObservation) -> float:
    """Submerged share of the wheel in [0, 1].

    Waterline form: (box_bottom - waterline) / height. Mask form: one minus
    the visible extent over the box height. Waterline wins when both exist.
    """
    height = obs.height_px
    if obs.waterline_px is not None:
        fraction = (obs.box_bottom_px - obs.waterline_px) / height
    elif obs.visible_mask_rows is not None:
        mask_top, mask_bottom = obs.visible_mask_rows
        fraction = 1.0 - (mask_bottom - mask_top) / height
    else:
        raise InsufficientObservation(
            f"wheel on {obs.tvid!r} has neither waterline nor mask rows"
        )
    return min(1.0, max(0.0, fraction))


def flood_depth(fraction: float, spec: TireSpec = DEFAULT_TIRE) -> float:
    """Depth in cm for a flood fraction: fraction times wheel diameter."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("flood fraction must be in [0, 1]")
    return fraction * wheel_diameter(spec)


def compensation_flag(depth_cm: float) -> bool:
    """True iff the depth exceeds the disaster-compensation threshold
    (strictly greater than 50 cm)."""
    if depth_cm < 0:
        raise ValueError("depth must be >= 0")
    return depth_cm > COMPENSATION_DEPTH_CM


class Grade(str, Enum):
    DRY = "dry"
    FLOODED_ABOVE_THIRD = "flooded_above_third"
    EXCEPTION = "exception"


@dataclass(frozen=True)
class WaterLevelEstimate:
    flood_fraction: float
    depth_cm: float
    wheel_diameter_cm: float
    grade: Grade
    compensation: bool

    def __post_init__(self):
        if abs(self.depth_cm - self.flood_fraction * self.wheel_diameter_cm) > 1e-9:
            raise ValueError("depth_cm must equal flood_fraction * wheel_diameter_cm")


def make_estimate(
    fraction: float,
    spec: TireSpec = DEFAULT_TIRE,
    wheel_diameter_cm: float | None = None,
) -> WaterLevelEstimate:
    """Full estimate from a flood fraction. The wheel diameter is a runtime
    parameter; when not given it derives from the tire spec."""
    diameter = wheel_diameter(spec) if wheel_diameter_cm is None else wheel_diameter_cm
    depth = fraction * diameter
    grade = Grade.FLOODED_ABOVE_THIRD if fraction >= GRADING_THRESHOLD else Grade.DRY
    return WaterLevelEstimate(
        flood_fraction=fraction,
        depth_cm=depth,
        wheel_diameter_cm=diameter,
        grade=grade,
        compensation=compensation_flag(depth),
    )


@dataclass(frozen=True)
class Rect:
    top: float
    left: float
    bottom: float
    right: float

    def __post_init__(self):
        if self.bottom <= self.top or self.right <= self.left:
            raise ValueError("rectangle must have bottom > top and right > left")

    @property
    def height(self) -> float:
        return self.bottom - self.top


@dataclass(frozen=True)
class VehicleContext:
    vehicle_box: Rect
    wheels: tuple[WheelObservation, ...] = ()

    def __post_init__(self):
        for wheel in self.wheels:
            if wheel.box_top_px < self.vehicle_box.top or wheel.box_bottom_px > self.vehicle_box.bottom:
                raise ValueError("wheel box rows must lie within the vehicle box")


def _wheels_in_lower_band(ctx: VehicleContext, band_fraction: float) -> list[WheelObservation]:
    band_top = ctx.vehicle_box.bottom - ctx.vehicle_box.height * band_fraction
    return [w for w in ctx.wheels if w.box_bottom_px >= band_top]


def grade(
    ctx: VehicleContext,
    spec: TireSpec = DEFAULT_TIRE,
    wheel_diameter_cm: float | None = None,
    lower_band_fraction: float = LOWER_BAND_FRACTION,
    aggregation: str = "largest",
) -> tuple[Grade, WaterLevelEstimate | None]:
    """Grade one vehicle's flooding.

    The wheel with the largest pixel height drives the fraction
    (aggregation="mean" averages across usable wheels instead). A vehicle
    with no usable wheel in its lower band grades as exception: the wheels
    may be fully submerged, so no number is invented.
    """
    candidates = [
        w
        for w in _wheels_in_lower_band(ctx, lower_band_fraction)
        if w.waterline_px is not None or w.visible_mask_rows is not None
    ]
    if not candidates:
        return Grade.EXCEPTION, None
    if aggregation == "mean":
        fraction = sum(flood_fraction(w) for w in candidates) / len(candidates)
    elif aggregation == "largest":
        best = max(candidates, key=lambda w: w.height_px)
        fraction = flood_fraction(best)
    else:
        raise ValueError(f"unknown aggregation {aggregation!r}")
    estimate = make_estimate(fraction, spec, wheel_diameter_cm)
    return estimate.grade, estimate


# -- detection-record bridge -------------------------------------------------
#
# Per-frame document emitted by any detector backend, version 1:
# {
#   "version": 1,
#   "tvid": "<camera id>",
#   "vehicles": [
#     {
#       "box": {"top": r, "left": c, "bottom": r, "right": c},
#       "wheels": [
#         {"box_top": r, "box_bottom": r,
#          "waterline": r | null,          # optional
#          "mask_rows": [top, bottom] | null}   # optional
#       ]
#     }
#   ]
# }


@dataclass(frozen=True)
class DetectionRecord:
    tvid: str
    vehicles: tuple[VehicleContext, ...] = ()


class DetectionRecordError(ValueError):
    pass


def parse_detection_record(doc: str | dict) -> DetectionRecord:
    if isinstance(doc, str):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise DetectionRecordError(f"bad detection record JSON: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise DetectionRecordError("detection record must be an object")
    version = doc.get("version")
    if version != DETECTION_RECORD_VERSION:
        raise DetectionRecordError(f"unsupported detection record version {version!r}")
    tvid = doc.get("tvid")
    if not isinstance(tvid, str):
        raise DetectionRecordError("detection record lacks a string 'tvid'")
    vehicles = []
    try:
        for veh in doc.get("vehicles", []):
            box = veh["box"]
            rect = Rect(box["top"], box["left"], box["bottom"], box["right"])
            wheels = tuple(
                WheelObservation(
                    tvid=tvid,
                    box_top_px=w["box_top"],
                    box_bottom_px=w["box_bottom"],
                    waterline_px=w.get("waterline"),
                    visible_mask_rows=tuple(w["mask_rows"]) if w.get("mask_rows") else None,
                )
                for w in veh.get("wheels", [])
            )
            vehicles.append(VehicleContext(vehicle_box=rect, wheels=wheels))
    except (KeyError, TypeError, ValueError) as exc:
        raise DetectionRecordError(f"bad detection record: {exc}") from None
    return DetectionRecord(tvid=tvid, vehicles=tuple(vehicles))


def detection_record_document(record: DetectionRecord) -> dict:
    return {
        "version": DETECTION_RECORD_VERSION,
        "tvid": record.tvid,
        "vehicles": [
            {
                "box": {
                    "top": v.vehicle_box.top,
                    "left": v.vehicle_box.left,
                    "bottom": v.vehicle_box.bottom,
                    "right": v.vehicle_box.right,
                },
                "wheels": [
                    {
                        "box_top": w.box_top_px,
                        "box_bottom": w.box_bottom_px,
                        "waterline": w.waterline_px,
                        "mask_rows": list(w.visible_mask_rows) if w.visible_mask_rows else None,
                    }
                    for w in v.wheels
                ],
            }
            for v in record.vehicles
        ],
    }


@runtime_checkable
class DetectorBackend(Protocol):
    """Maps frame bytes to a detection record. Mirrors ClassifierBackend."""

    thread_safe: bool

    def detect(self, frame: bytes) -> DetectionRecord: ...


class SocketDetectorBackend:
    """Client for an external detector on a local stream socket. Framing is
    4-byte big-endian length + payload; the response payload is a detection
    record document (UTF-8 JSON)."""

    thread_safe = True

    def __init__(self, socket_path: str | Path, timeout: float = 30.0):
        self.socket_path = str(socket_path)
        self.timeout = timeout

    def detect(self, frame: bytes) -> DetectionRecord:
        with socket.socket(socket.AF_UNIX, socket.SOCK_STREAM) as sock:
            sock.settimeout(self.timeout)
            sock.connect(self.socket_path)
            sock.sendall(struct.pack(">I", len(frame)) + frame)
            header = _recv_exact(sock, 4)
            (length,) = struct.unpack(">I", header)
            payload = _recv_exact(sock, length)
        return parse_detection_record(payload.decode("utf-8"))


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    got = 0
    while got < n:
        chunk = sock.recv(n - got)
        if not chunk:
            raise ConnectionError("detector closed the connection mid-message")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


class StaticDetectorBackend:
    """Canned records keyed by the tvid embedded in simulator frames; cameras
    without a record yield an empty detection. Useful for tests and demos."""

    thread_safe = True

    def __init__(self, records: dict[str, DetectionRecord]):
        self.records = dict(records)

    def detect(self, frame: bytes) -> DetectionRecord:
        tag = read_tag(frame)
        if tag is not None and tag.tvid in self.records:
            return self.records[tag.tvid]
        return DetectionRecord(tvid=tag.tvid if tag else "", vehicles=())


def best_estimate(
    record: DetectionRecord,
    spec: TireSpec = DEFAULT_TIRE,
    wheel_diameter_cm: float | None = None,
    aggregation: str = "largest",
) -> tuple[Grade | None, WaterLevelEstimate | None]:
    """Fold a whole detection record into one (grade, estimate) for the
    camera: among vehicles yielding an estimate, the one whose measured wheel
    is tallest wins; exception only if every vehicle grades exception."""
    graded: list[tuple[float, Grade, WaterLevelEstimate]] = []
    saw_vehicle = False
    for ctx in record.vehicles:
        saw_vehicle = True
        g, est = grade(ctx, spec, wheel_diameter_cm, aggregation=aggregation)
        if est is not None:
            tallest = max(
                (w.height_px for w in _wheels_in_lower_band(ctx, LOWER_BAND_FRACTION)),
                default=0.0,
            )
            graded.append((tallest, g, est))
    if graded:
        _, g, est = max(graded, key=lambda item: item[0])
        return g, est
    if saw_vehicle:
        return Grade.EXCEPTION, None
    return None, None


def estimates_for_frames(
    backend: DetectorBackend,
    frames: Iterable[tuple[str, bytes]],
    spec: TireSpec = DEFAULT_TIRE,
    wheel_diameter_cm: float | None = None,
) -> dict[str, tuple[Grade | None, WaterLevelEstimate | None]]:
    """Run the detector over (tvid, frame) pairs and fold each record."""
    out: dict[str, tuple[Grade | None, WaterLevelEstimate | None]] = {}
    for tvid, frame in frames:
        record = backend.detect(frame)
        out[tvid] = best_estimate(record, spec, wheel_diameter_cm)
    return out
