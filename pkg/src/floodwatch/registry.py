"""Camera fleet registry: parse, validate, index, and re-serialize the
fleet description document.

Document shape: a UTF-8 JSON object mapping network key -> array of camera
objects with exact key spellings ``tvid``, ``Longitude``, ``Latitude``,
``roadsection``, ``url``. Optional extension keys ``codec`` (MJPEG | JPEG |
FLV) and ``resolution`` ([width, height]) are tolerated, as are arbitrary
extra fields, which round-trip opaquely.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterator
from urllib.parse import urlparse


class RegistryError(Exception):
    """Base for registry document errors."""


class ParseError(RegistryError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        loc = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{message}{loc}")


class DuplicateIdError(RegistryError):
    def __init__(self, tvid: str):
        self.tvid = tvid
        super().__init__(f"duplicate camera id: {tvid!r}")


class ValidationError(RegistryError):
    def __init__(self, tvid: str, message: str):
        self.tvid = tvid
        super().__init__(f"camera {tvid!r}: {message}")


class Codec(str, Enum):
    MJPEG = "MJPEG"
    JPEG = "JPEG"
    FLV = "FLV"


_CORE_KEYS = ("tvid", "Longitude", "Latitude", "roadsection", "url")
_EXT_KEYS = ("codec", "resolution")


@dataclass(frozen=True)
class CameraRecord:
    tvid: str
    longitude: float
    latitude: float
    roadsection: str
    url: str
    network: str
    codec_hint: Codec | None = None
    resolution_hint: tuple[int, int] | None = None
    extras: dict[str, Any] = field(default_factory=dict)


class CameraRegistry:
    """Immutable, indexed view of the fleet. Safe to share across workers."""

    def __init__(self, records: list[CameraRecord]):
        self._records: tuple[CameraRecord, ...] = tuple(records)
        by_id: dict[str, CameraRecord] = {}
        by_network: dict[str, list[str]] = {}
        for rec in self._records:
            if rec.tvid in by_id:
                raise DuplicateIdError(rec.tvid)
            by_id[rec.tvid] = rec
            by_network.setdefault(rec.network, []).append(rec.tvid)
        self._by_id = by_id
        self.by_network: dict[str, tuple[str, ...]] = {
            net: tuple(ids) for net, ids in by_network.items()
        }

    @property
    def records(self) -> tuple[CameraRecord, ...]:
        return self._records

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[CameraRecord]:
        return iter(self._records)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CameraRegistry):
            return NotImplemented
        return self._records == other._records

    def lookup(self, tvid: str) -> CameraRecord | None:
        """Return the record for tvid, or None. Not-found is a value, not an error."""
        return self._by_id.get(tvid)

    def network_summary(self) -> list[tuple[str, int]]:
        """One (network key, camera count) row per network, in document order."""
        return [(net, len(ids)) for net, ids in self.by_network.items()]


def _require(obj: dict, key: str, tvid: str) -> Any:
    if key not in obj:
        raise ValidationError(tvid, f"missing required field {key!r}")
    return obj[key]


def _record_from_object(obj: Any, network: str) -> CameraRecord:
    if not isinstance(obj, dict):
        raise ParseError(f"camera entry under {network!r} is not an object")
    tvid = obj.get("tvid")
    if not isinstance(tvid, str) or not tvid:
        raise ParseError(f"camera entry under {network!r} lacks a string 'tvid'")

    lon = _require(obj, "Longitude", tvid)
    lat = _require(obj, "Latitude", tvid)
    roadsection = _require(obj, "roadsection", tvid)
    url = _require(obj, "url", tvid)

    if not isinstance(lon, (int, float)) or isinstance(lon, bool):
        raise ValidationError(tvid, "Longitude is not a number")
    if not isinstance(lat, (int, float)) or isinstance(lat, bool):
        raise ValidationError(tvid, "Latitude is not a number")
    if not -180.0 <= lon <= 180.0:
        raise ValidationError(tvid, f"Longitude {lon} outside [-180, 180]")
    if not -90.0 <= lat <= 90.0:
        raise ValidationError(tvid, f"Latitude {lat} outside [-90, 90]")
    if not isinstance(roadsection, str):
        raise ValidationError(tvid, "roadsection is not a string")
    if not isinstance(url, str) or not url:
        raise ValidationError(tvid, "url is empty")
    parsed = urlparse(url)
    if not parsed.scheme:
        raise ValidationError(tvid, f"url {url!r} is not a valid URI")

    codec = None
    if "codec" in obj and obj["codec"] is not None:
        try:
            codec = Codec(obj["codec"])
        except ValueError:
            raise ValidationError(tvid, f"unknown codec {obj['codec']!r}") from None
    resolution = None
    if "resolution" in obj and obj["resolution"] is not None:
        res = obj["resolution"]
        if (
            not isinstance(res, (list, tuple))
            or len(res) != 2
            or not all(isinstance(v, int) and v > 0 for v in res)
        ):
            raise ValidationError(tvid, f"resolution {res!r} is not [width, height]")
        resolution = (res[0], res[1])

    extras = {k: v for k, v in obj.items() if k not in _CORE_KEYS + _EXT_KEYS}
    return CameraRecord(
        tvid=tvid,
        longitude=float(lon),
        latitude=float(lat),
        roadsection=roadsection,
        url=url,
        network=network,
        codec_hint=codec,
        resolution_hint=resolution,
        extras=extras,
    )


def parse_registry(text: str) -> CameraRegistry:
    """Parse a registry document. Strict JSON: trailing commas are rejected."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno, column=exc.colno) from None
    if not isinstance(doc, dict):
        raise ParseError("top level is not an object of network -> camera list")
    records: list[CameraRecord] = []
    for network, entries in doc.items():
        if not isinstance(entries, list):
            raise ParseError(f"value under network {network!r} is not an array")
        for obj in entries:
            records.append(_record_from_object(obj, network))
    return CameraRegistry(records)


def parse_registry_file(path: str | Path) -> CameraRegistry:
    return parse_registry(Path(path).read_text(encoding="utf-8"))


def _record_to_object(rec: CameraRecord) -> dict[str, Any]:
    obj: dict[str, Any] = {
        "tvid": rec.tvid,
        "Longitude": rec.longitude,
        "Latitude": rec.latitude,
        "roadsection": rec.roadsection,
        "url": rec.url,
    }
    if rec.codec_hint is not None:
        obj["codec"] = rec.codec_hint.value
    if rec.resolution_hint is not None:
        obj["resolution"] = list(rec.resolution_hint)
    obj.update(rec.extras)
    return obj


def registry_document(registry: CameraRegistry) -> dict[str, list[dict[str, Any]]]:
    doc: dict[str, list[dict[str, Any]]] = {net: [] for net in registry.by_network}
    for rec in registry:
        doc[rec.network].append(_record_to_object(rec))
    return doc


def serialize_registry(registry: CameraRegistry, indent: int | None = 2) -> str:
    """Emit the document shape back out; parse(serialize(r)) == r."""
    return json.dumps(registry_document(registry), ensure_ascii=False, indent=indent)
