"""Three-class scene classification (normal / flood / unknown) behind a
pluggable backend interface.

The shipped stub backend reads the scene tag that simulator frames carry
(COM segment fast path, colored top band as the re-encoding-safe fallback).
A real model plugs in either in-process (any object with ``classify``) or as
an external process reached over a local stream socket: each message is a
4-byte big-endian length followed by the payload; the request payload is the
encoded frame, the response payload is UTF-8 text with three space-separated
decimals ``"<p_normal> <p_flood> <p_unknown>"``.
"""

from __future__ import annotations

import io
import socket
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, runtime_checkable

import numpy as np
from PIL import Image

from .frames import BAND_COLORS, SceneClass, band_rows, read_tag

MODEL_INPUT_SIZE = (224, 224)

PROBABILITY_TOLERANCE = 1e-6

# argmax ties resolve to the most conservative outcome first
_TIE_BREAK_ORDER = (SceneClass.UNKNOWN, SceneClass.FLOOD, SceneClass.NORMAL)


class FrameDecodeError(Exception):
    """Frame bytes could not be decoded into an image."""


@dataclass(frozen=True)
class ClassProbabilities:
    p_normal: float
    p_flood: float
    p_unknown: float

    def __post_init__(self):
        total = self.p_normal + self.p_flood + self.p_unknown
        if min(self.p_normal, self.p_flood, self.p_unknown) < -PROBABILITY_TOLERANCE:
            raise ValueError(f"negative probability in {self}")
        if abs(total - 1.0) > PROBABILITY_TOLERANCE:
            raise ValueError(f"probabilities sum to {total}, not 1")

    def of(self, label: SceneClass) -> float:
        return {
            SceneClass.NORMAL: self.p_normal,
            SceneClass.FLOOD: self.p_flood,
            SceneClass.UNKNOWN: self.p_unknown,
        }[label]


def derive_label(probs: ClassProbabilities) -> SceneClass:
    """Argmax with tie-break order unknown > flood > normal."""
    best = _TIE_BREAK_ORDER[0]
    for label in _TIE_BREAK_ORDER[1:]:
        if probs.of(label) > probs.of(best):
            best = label
    return best


@dataclass(frozen=True)
class SceneLabel:
    label: SceneClass
    probabilities: ClassProbabilities
    note: str | None = None


def scene_label(probs: ClassProbabilities, note: str | None = None) -> SceneLabel:
    return SceneLabel(label=derive_label(probs), probabilities=probs, note=note)


def format_confidence(probs: ClassProbabilities) -> str:
    """Per-class confidence in whole percentage points, like the map popups."""
    return (
        f"normal {round(probs.p_normal * 100)}% | "
        f"flood {round(probs.p_flood * 100)}% | "
        f"unknown {round(probs.p_unknown * 100)}%"
    )


@runtime_checkable
class ClassifierBackend(Protocol):
    """Deterministic mapping from frame bytes to class probabilities.

    Backends that are not safe for concurrent classify calls must set
    ``thread_safe = False``; the pipeline then serializes access.
    """

    thread_safe: bool

    def classify(self, frame: bytes) -> ClassProbabilities: ...


def to_model_input(frame: bytes) -> np.ndarray:
    """Decode and resize to the 224x224x3 model input (bilinear, no aspect
    preservation). Raises FrameDecodeError on undecodable bytes."""
    try:
        img = Image.open(io.BytesIO(frame))
        img.load()
        if img.mode != "RGB":
            img = img.convert("RGB")
        img = img.resize(MODEL_INPUT_SIZE, Image.BILINEAR)
    except Exception as exc:
        raise FrameDecodeError(str(exc) or exc.__class__.__name__) from None
    return np.asarray(img, dtype=np.uint8)


def _stub_probabilities(label: SceneClass) -> ClassProbabilities:
    values = {cls: 0.05 for cls in SceneClass}
    values[label] = 0.90
    return ClassProbabilities(
        p_normal=values[SceneClass.NORMAL],
        p_flood=values[SceneClass.FLOOD],
        p_unknown=values[SceneClass.UNKNOWN],
    )


_BAND_MATCH_DISTANCE = 60.0


def _band_class(pixels: np.ndarray) -> SceneClass | None:
    # the source band occupies >= BAND_FRACTION of the height, so after the
    # 224-row resize its first few rows are pure band color
    rows = max(2, band_rows(pixels.shape[0]) // 2)
    mean = pixels[:rows].reshape(-1, 3).mean(axis=0)
    best: tuple[float, SceneClass] | None = None
    for cls, color in BAND_COLORS.items():
        dist = float(np.abs(mean - np.asarray(color, dtype=np.float64)).max())
        if best is None or dist < best[0]:
            best = (dist, cls)
    if best is not None and best[0] <= _BAND_MATCH_DISTANCE:
        return best[1]
    return None


class StubBackend:
    """Reads the embedded scene tag; untagged but decodable frames are
    unknown. Stateless and safe for concurrent use."""

    thread_safe = True

    def classify(self, frame: bytes) -> ClassProbabilities:
        tag = read_tag(frame)
        if tag is not None:
            return _stub_probabilities(tag.class_label)
        pixels = to_model_input(frame)  # raises FrameDecodeError if broken
        band = _band_class(pixels)
        if band is not None:
            return _stub_probabilities(band)
        return _stub_probabilities(SceneClass.UNKNOWN)


def stub_backend() -> StubBackend:
    return StubBackend()


class SocketClassifierBackend:
    """Client for an external classifier process on a local stream socket."""

    thread_safe = True

    def __init__(self, socket_path: str | Path, timeout: float = 30.0):
        self.socket_path = str(socket_path)
        self.timeout = timeout

    def classify(self, frame: bytes) -> ClassProbabilities:
        payload = _socket_round_trip(self.socket_path, frame, self.timeout)
        parts = payload.decode("utf-8").split()
        if len(parts) != 3:
            raise ValueError(f"backend returned {len(parts)} fields, expected 3")
        return ClassProbabilities(float(parts[0]), float(parts[1]), float(parts[2]))


def _socket_round_trip(path: str, request: bytes, timeout: float) -> bytes:
    with socket.socket(socket.AF_UNIX, socket.SOCK_STREAM) as sock:
        sock.settimeout(timeout)
        sock.connect(path)
        sock.sendall(struct.pack(">I", len(request)) + request)
        header = _recv_exact(sock, 4)
        (length,) = struct.unpack(">I", header)
        return _recv_exact(sock, length)


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    got = 0
    while got < n:
        chunk = sock.recv(n - got)
        if not chunk:
            raise ConnectionError("backend closed the connection mid-message")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


_DECODE_FAILURE_PROBS = ClassProbabilities(0.0, 0.0, 1.0)


def classify(backend: ClassifierBackend, frame: bytes) -> SceneLabel:
    """Classify one frame. Undecodable frames become unknown with a
    decode-failure annotation, never an exception."""
    try:
        probs = backend.classify(frame)
    except FrameDecodeError as exc:
        return SceneLabel(
            label=SceneClass.UNKNOWN,
            probabilities=_DECODE_FAILURE_PROBS,
            note=f"decode-failure: {exc}",
        )
    return scene_label(probs)


def classify_batch(backend: ClassifierBackend, frames: Iterable[bytes]) -> list[SceneLabel]:
    """Order-preserving; element i is classify(frames[i]). Per-frame decode
    failures become unknown labels, never batch aborts."""
    return [classify(backend, frame) for frame in frames]
