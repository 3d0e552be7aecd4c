"""Synthetic frame rendering and the scene-tag codec shared by the fleet
simulator and the stub classifier.

A tagged frame carries its scene class twice:

* a JPEG COM segment right after SOI, payload ``FWTAG1`` + JSON
  (``{"tvid": ..., "class": ..., "seq": ...}``) -- lossless, cheap to read
  without decoding pixels;
* a solid-color band across the top pixel rows (class -> fixed color) --
  survives re-encoding and resizing.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass
from enum import Enum

import numpy as np
from PIL import Image

TAG_MAGIC = b"FWTAG1"

JPEG_QUALITY = 85

# Fraction of image height used for the class band, with a floor in rows.
BAND_FRACTION = 0.05
BAND_MIN_ROWS = 6


class SceneClass(str, Enum):
    NORMAL = "normal"
    FLOOD = "flood"
    UNKNOWN = "unknown"


BAND_COLORS: dict[SceneClass, tuple[int, int, int]] = {
    SceneClass.NORMAL: (0, 168, 0),
    SceneClass.FLOOD: (208, 0, 0),
    SceneClass.UNKNOWN: (128, 128, 128),
}

# Background shades keep the synthetic scenes visually distinct per class
# without inflating the encoded size.
_BACKGROUNDS = {
    SceneClass.NORMAL: (170, 170, 175),
    SceneClass.FLOOD: (110, 96, 70),
    SceneClass.UNKNOWN: (40, 40, 44),
}


@dataclass(frozen=True)
class SceneTag:
    tvid: str
    class_label: SceneClass
    sequence: int


class TagError(ValueError):
    """Raised when bytes are not a JPEG that a tag can be spliced into."""


def band_rows(height: int) -> int:
    return max(BAND_MIN_ROWS, int(height * BAND_FRACTION))


def render_scene(scene: SceneClass, size: tuple[int, int]) -> np.ndarray:
    """Synthesize an RGB scene of the given (width, height) with the class band."""
    width, height = size
    bg = _BACKGROUNDS[scene]
    img = np.empty((height, width, 3), dtype=np.uint8)
    # vertical gradient so the frame is not a single flat block
    ramp = np.linspace(-18, 18, height, dtype=np.float64)[:, None]
    for ch in range(3):
        img[:, :, ch] = np.clip(bg[ch] + ramp, 0, 255).astype(np.uint8)
    img[: band_rows(height), :, :] = BAND_COLORS[scene]
    return img


def encode_jpeg(pixels: np.ndarray, quality: int = JPEG_QUALITY) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(pixels, "RGB").save(buf, "JPEG", quality=quality)
    return buf.getvalue()


def _tag_payload(tag: SceneTag) -> bytes:
    doc = {"tvid": tag.tvid, "class": tag.class_label.value, "seq": tag.sequence}
    return TAG_MAGIC + json.dumps(doc, separators=(",", ":")).encode("utf-8")


def insert_comment(jpeg: bytes, payload: bytes) -> bytes:
    """Splice a COM segment directly after SOI. Payload must fit in 16 bits - 2."""
    if len(jpeg) < 2 or jpeg[:2] != b"\xff\xd8":
        raise TagError("not a JPEG (missing SOI)")
    if len(payload) > 0xFFFD:
        raise TagError("comment payload too large")
    segment = b"\xff\xfe" + struct.pack(">H", len(payload) + 2) + payload
    return jpeg[:2] + segment + jpeg[2:]


def iter_comments(jpeg: bytes):
    """Yield COM segment payloads by walking the JPEG marker stream."""
    if len(jpeg) < 2 or jpeg[:2] != b"\xff\xd8":
        return
    pos = 2
    n = len(jpeg)
    while pos + 4 <= n:
        if jpeg[pos] != 0xFF:
            return  # marker stream broken; give up quietly
        marker = jpeg[pos + 1]
        if marker == 0xD9:  # EOI
            return
        if marker == 0xDA:  # SOS: entropy-coded data follows, stop scanning
            return
        if 0xD0 <= marker <= 0xD7 or marker == 0x01:  # standalone markers
            pos += 2
            continue
        seg_len = struct.unpack(">H", jpeg[pos + 2 : pos + 4])[0]
        if marker == 0xFE:
            yield jpeg[pos + 4 : pos + 2 + seg_len]
        pos += 2 + seg_len


def tag_frame(jpeg: bytes, tag: SceneTag) -> bytes:
    return insert_comment(jpeg, _tag_payload(tag))


def read_tag(jpeg: bytes) -> SceneTag | None:
    """Extract the scene tag from a frame's COM segment, if present."""
    for payload in iter_comments(jpeg):
        if not payload.startswith(TAG_MAGIC):
            continue
        try:
            doc = json.loads(payload[len(TAG_MAGIC) :].decode("utf-8"))
            return SceneTag(
                tvid=str(doc["tvid"]),
                class_label=SceneClass(doc["class"]),
                sequence=int(doc["seq"]),
            )
        except (ValueError, KeyError, UnicodeDecodeError):
            continue
    return None


def build_frame(
    tvid: str,
    scene: SceneClass,
    sequence: int,
    size: tuple[int, int] = (320, 240),
    quality: int = JPEG_QUALITY,
) -> bytes:
    """Render, encode, and tag one synthetic camera frame."""
    jpeg = encode_jpeg(render_scene(scene, size), quality=quality)
    return tag_frame(jpeg, SceneTag(tvid, scene, sequence))
