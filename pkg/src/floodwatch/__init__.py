"""Urban waterlogging sensing pipeline: fleet capture, scene classification,
tire-reference water-level estimation, flood mapping and notification, plus a
synthetic camera-fleet simulator for desk-scale experiments."""

__version__ = "0.1.0"

from .capture import CaptureConfig, CaptureResult, Failure, FailureKind, Frame, RoundResult
from .classifier import ClassProbabilities, SceneLabel, classify, classify_batch, stub_backend
from .frames import SceneClass, SceneTag
from .mapping import CameraStatus, FloodEvent, MapState, Mode, Status, SummaryReport
from .notify import Delivery, NotificationPolicy, NotifyMode
from .registry import CameraRecord, CameraRegistry, parse_registry
from .simulator import Fault, FaultKind, SimCamera, SimScenario, spawn_fleet
from .waterlevel import (
    Grade,
    TireSpec,
    VehicleContext,
    WaterLevelEstimate,
    WheelObservation,
    flood_depth,
    flood_fraction,
    parse_tire_marking,
    wheel_diameter,
)

__all__ = [
    "CameraRecord",
    "CameraRegistry",
    "CameraStatus",
    "CaptureConfig",
    "CaptureResult",
    "ClassProbabilities",
    "Delivery",
    "Failure",
    "FailureKind",
    "Fault",
    "FaultKind",
    "FloodEvent",
    "Frame",
    "Grade",
    "MapState",
    "Mode",
    "NotificationPolicy",
    "NotifyMode",
    "RoundResult",
    "SceneClass",
    "SceneLabel",
    "SceneTag",
    "SimCamera",
    "SimScenario",
    "Status",
    "SummaryReport",
    "TireSpec",
    "VehicleContext",
    "WaterLevelEstimate",
    "WheelObservation",
    "classify",
    "classify_batch",
    "flood_depth",
    "flood_fraction",
    "parse_registry",
    "parse_tire_marking",
    "spawn_fleet",
    "stub_backend",
    "wheel_diameter",
]
