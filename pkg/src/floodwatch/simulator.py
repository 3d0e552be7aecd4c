"""Synthetic camera fleet served over HTTP.

One asyncio server hosts every simulated camera on a single port:

    GET /cam/{tvid}/frame    single JPEG image
    GET /cam/{tvid}/stream   multipart/x-mixed-replace motion stream
    POST /admin/scene        {"tvid": ..., "scene": ...}
    POST /admin/fault        {"tvid": ..., "fault": ..., "seconds": ...}
    GET /healthz

Per-camera state (scene class, fault, frame counter) is mutated only on the
event loop thread; control calls from other threads are marshalled onto the
loop, so serving and control interleave safely.
"""

from __future__ import annotations

import asyncio
import json
import logging
import socket
import struct
import threading
import zlib
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any
from urllib.parse import unquote

import numpy as np

from .frames import SceneClass, SceneTag, encode_jpeg, render_scene, tag_frame
from .registry import CameraRegistry, Codec, parse_registry

log = logging.getLogger(__name__)


class SpawnError(Exception):
    """Fleet could not be brought up (bind failure, resource exhaustion)."""


class UnknownCameraError(KeyError):
    """Control operation addressed a tvid that is not in the scenario."""


class FaultKind(str, Enum):
    NONE = "none"
    NO_CONNECT = "no_connect"
    STALL = "stall"
    NOISE = "noise"
    TRUNCATED_FRAME = "truncated_frame"


@dataclass(frozen=True)
class Fault:
    kind: FaultKind = FaultKind.NONE
    seconds: float = 0.0

    @classmethod
    def none(cls) -> "Fault":
        return cls(FaultKind.NONE)

    @classmethod
    def no_connect(cls) -> "Fault":
        return cls(FaultKind.NO_CONNECT)

    @classmethod
    def stall(cls, seconds: float) -> "Fault":
        return cls(FaultKind.STALL, float(seconds))

    @classmethod
    def noise(cls) -> "Fault":
        return cls(FaultKind.NOISE)

    @classmethod
    def truncated(cls) -> "Fault":
        return cls(FaultKind.TRUNCATED_FRAME)

    @classmethod
    def parse(cls, value: "Fault | str | dict | None") -> "Fault":
        if value is None:
            return cls.none()
        if isinstance(value, Fault):
            return value
        if isinstance(value, str):
            if ":" in value:
                kind, _, secs = value.partition(":")
                return cls(FaultKind(kind), float(secs))
            return cls(FaultKind(value))
        if isinstance(value, dict):
            return cls(FaultKind(value["kind"]), float(value.get("seconds", 0.0)))
        raise ValueError(f"cannot parse fault from {value!r}")

    def encode(self) -> str | dict:
        if self.kind is FaultKind.STALL:
            return {"kind": self.kind.value, "seconds": self.seconds}
        return self.kind.value


def _coords_for(tvid: str) -> tuple[float, float]:
    # deterministic pseudo-position so registries are stable across runs
    h = zlib.crc32(tvid.encode("utf-8"))
    lat = 21.8 + (h % 36000) / 10000.0
    lon = 120.0 + ((h >> 8) % 25000) / 10000.0
    return lon, lat


@dataclass
class SimCamera:
    tvid: str
    scene: SceneClass = SceneClass.NORMAL
    fault: Fault = field(default_factory=Fault.none)
    size: tuple[int, int] | None = None
    codec: Codec = Codec.JPEG
    network: str = "SIM"
    longitude: float | None = None
    latitude: float | None = None
    roadsection: str | None = None

    def __post_init__(self):
        self.scene = SceneClass(self.scene)
        self.fault = Fault.parse(self.fault)
        self.codec = Codec(self.codec)
        if self.longitude is None or self.latitude is None:
            lon, lat = _coords_for(self.tvid)
            self.longitude = self.longitude if self.longitude is not None else lon
            self.latitude = self.latitude if self.latitude is not None else lat
        if self.roadsection is None:
            self.roadsection = f"{self.network} simulated section {self.tvid}"


@dataclass
class SimScenario:
    cameras: list[SimCamera]
    frame_size: tuple[int, int] = (320, 240)
    frame_interval_ms: int = 1000

    def camera_size(self, cam: SimCamera) -> tuple[int, int]:
        return cam.size or self.frame_size

    def to_json(self) -> str:
        doc = {
            "frame_size": list(self.frame_size),
            "frame_interval_ms": self.frame_interval_ms,
            "cameras": [
                {
                    "tvid": c.tvid,
                    "scene": c.scene.value,
                    "fault": c.fault.encode(),
                    "size": list(c.size) if c.size else None,
                    "codec": c.codec.value,
                    "network": c.network,
                }
                for c in self.cameras
            ],
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SimScenario":
        doc = json.loads(text)
        cameras = [
            SimCamera(
                tvid=c["tvid"],
                scene=SceneClass(c.get("scene", "normal")),
                fault=Fault.parse(c.get("fault")),
                size=tuple(c["size"]) if c.get("size") else None,
                codec=Codec(c.get("codec", "JPEG")),
                network=c.get("network", "SIM"),
            )
            for c in doc["cameras"]
        ]
        return cls(
            cameras=cameras,
            frame_size=tuple(doc.get("frame_size", (320, 240))),
            frame_interval_ms=int(doc.get("frame_interval_ms", 1000)),
        )

    @classmethod
    def from_file(cls, path: str | Path) -> "SimScenario":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


# Network mix of the reference fleet: (count, codec, resolutions).
ISLAND_NETWORKS: dict[str, tuple[int, Codec, list[tuple[int, int]]]] = {
    "DGH": (1424, Codec.MJPEG, [(320, 240), (352, 240), (480, 270), (720, 480)]),
    "NTPC": (289, Codec.MJPEG, [(800, 600), (320, 180), (320, 192)]),
    "TYC": (123, Codec.MJPEG, [(320, 240), (352, 240), (480, 270), (704, 480)]),
    "TYC-SEWER": (29, Codec.FLV, [(800, 464), (1280, 720)]),
    "TNC": (148, Codec.MJPEG, [(352, 240), (704, 480), (960, 480), (1920, 1080)]),
    "KC": (341, Codec.JPEG, [(320, 240), (352, 240), (640, 480), (704, 480), (720, 480)]),
    "NC": (25, Codec.JPEG, [(1280, 720), (1280, 1024), (352, 240), (720, 480)]),
}


def island_fleet_scenario(frame_interval_ms: int = 1000) -> SimScenario:
    """Full-scale fleet (2379 cameras) with the reference network split."""
    cameras: list[SimCamera] = []
    for network, (count, codec, sizes) in ISLAND_NETWORKS.items():
        for i in range(count):
            cameras.append(
                SimCamera(
                    tvid=f"sim-{network}-{i:04d}",
                    scene=SceneClass.NORMAL,
                    size=sizes[i % len(sizes)],
                    codec=codec,
                    network=network,
                )
            )
    return SimScenario(cameras=cameras, frame_interval_ms=frame_interval_ms)


def uniform_scenario(
    count: int,
    scene: SceneClass = SceneClass.NORMAL,
    size: tuple[int, int] = (320, 240),
    codec: Codec = Codec.JPEG,
    frame_interval_ms: int = 1000,
    prefix: str = "sim",
) -> SimScenario:
    cameras = [
        SimCamera(tvid=f"{prefix}-{i:04d}", scene=scene, size=size, codec=codec)
        for i in range(count)
    ]
    return SimScenario(cameras=cameras, frame_size=size, frame_interval_ms=frame_interval_ms)


class _CamState:
    __slots__ = ("camera", "scene", "fault", "seq", "noise_template")

    def __init__(self, camera: SimCamera):
        self.camera = camera
        self.scene = SceneClass(camera.scene)
        self.fault = Fault.parse(camera.fault)
        self.seq = 0
        self.noise_template: bytes | None = None


_MULTIPART_BOUNDARY = "floodframe"


class FleetHandle:
    """Running fleet: endpoint map plus thread-safe control operations."""

    def __init__(self, scenario: SimScenario, host: str = "127.0.0.1", port: int = 0):
        self.scenario = scenario
        self.host = host
        self.port = port
        self._states: dict[str, _CamState] = {c.tvid: _CamState(c) for c in scenario.cameras}
        self._templates: dict[tuple[SceneClass, tuple[int, int]], bytes] = {}
        self._loop: asyncio.AbstractEventLoop | None = None
        self._server: asyncio.AbstractServer | None = None
        self._thread: threading.Thread | None = None
        self._startup_error: BaseException | None = None
        self.endpoints: dict[str, str] = {}

    # -- lifecycle -----------------------------------------------------

    def start(self) -> "FleetHandle":
        ready = threading.Event()
        self._thread = threading.Thread(
            target=self._run_loop, args=(ready,), daemon=True, name="floodwatch-fleet"
        )
        self._thread.start()
        ready.wait(timeout=30)
        if self._startup_error is not None:
            raise SpawnError(f"fleet startup failed: {self._startup_error}")
        if self._server is None:
            raise SpawnError("fleet startup timed out")
        base = f"http://{self.host}:{self.port}"
        for tvid, state in self._states.items():
            kind = "frame" if state.camera.codec is Codec.JPEG else "stream"
            self.endpoints[tvid] = f"{base}/cam/{tvid}/{kind}"
        return self

    def _run_loop(self, ready: threading.Event) -> None:
        loop = asyncio.new_event_loop()
        asyncio.set_event_loop(loop)
        self._loop = loop
        try:
            self._server = loop.run_until_complete(
                asyncio.start_server(self._handle, self.host, self.port, backlog=4096)
            )
            self.port = self._server.sockets[0].getsockname()[1]
        except OSError as exc:
            self._startup_error = exc
            ready.set()
            loop.close()
            return
        ready.set()
        try:
            loop.run_forever()
        finally:
            self._server.close()
            loop.run_until_complete(self._server.wait_closed())
            pending = asyncio.all_tasks(loop)
            for task in pending:
                task.cancel()
            if pending:
                loop.run_until_complete(asyncio.gather(*pending, return_exceptions=True))
            loop.close()

    def stop(self) -> None:
        if self._loop is not None and self._loop.is_running():
            self._loop.call_soon_threadsafe(self._loop.stop)
        if self._thread is not None:
            self._thread.join(timeout=30)

    def __enter__(self) -> "FleetHandle":
        return self

    def __exit__(self, *exc) -> None:
        self.stop()

    @property
    def base_url(self) -> str:
        return f"http://{self.host}:{self.port}"

    # -- control -------------------------------------------------------

    def set_scene(self, tvid: str, scene: SceneClass | str) -> None:
        self._control(tvid, scene=SceneClass(scene))

    def inject_fault(self, tvid: str, fault: Fault | str | dict) -> None:
        self._control(tvid, fault=Fault.parse(fault))

    def _control(self, tvid: str, scene: SceneClass | None = None, fault: Fault | None = None):
        assert self._loop is not None, "fleet not started"
        fut = asyncio.run_coroutine_threadsafe(self._apply(tvid, scene, fault), self._loop)
        fut.result(timeout=30)

    async def _apply(self, tvid: str, scene: SceneClass | None, fault: Fault | None):
        state = self._states.get(tvid)
        if state is None:
            raise UnknownCameraError(tvid)
        if scene is not None:
            state.scene = scene
        if fault is not None:
            state.fault = fault
            if fault.kind is FaultKind.NOISE and state.noise_template is None:
                state.noise_template = self._noise_template(state)

    # -- registry bridge -------------------------------------------------

    def registry_document(self) -> dict[str, list[dict[str, Any]]]:
        """Fleet description in the registry document shape, URLs included."""
        doc: dict[str, list[dict[str, Any]]] = {}
        for tvid, state in self._states.items():
            cam = state.camera
            doc.setdefault(cam.network, []).append(
                {
                    "tvid": tvid,
                    "Longitude": cam.longitude,
                    "Latitude": cam.latitude,
                    "roadsection": cam.roadsection,
                    "url": self.endpoints[tvid],
                    "codec": cam.codec.value,
                    "resolution": list(self.scenario.camera_size(cam)),
                }
            )
        return doc

    def registry(self) -> CameraRegistry:
        return parse_registry(json.dumps(self.registry_document()))

    # -- serving ---------------------------------------------------------

    def _template(self, scene: SceneClass, size: tuple[int, int]) -> bytes:
        key = (scene, size)
        jpeg = self._templates.get(key)
        if jpeg is None:
            jpeg = encode_jpeg(render_scene(scene, size))
            self._templates[key] = jpeg
        return jpeg

    def _noise_template(self, state: _CamState) -> bytes:
        size = self.scenario.camera_size(state.camera)
        rng = np.random.default_rng(zlib.crc32(state.camera.tvid.encode()))
        pixels = rng.integers(0, 256, (size[1], size[0], 3), dtype=np.uint8)
        return encode_jpeg(pixels)

    def _next_frame(self, state: _CamState) -> bytes:
        state.seq += 1
        if state.fault.kind is FaultKind.NOISE and state.noise_template is not None:
            base = state.noise_template
        else:
            base = self._template(state.scene, self.scenario.camera_size(state.camera))
        return tag_frame(base, SceneTag(state.camera.tvid, state.scene, state.seq))

    async def _handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        try:
            await self._handle_inner(reader, writer)
        except (
            asyncio.IncompleteReadError,
            asyncio.LimitOverrunError,
            ConnectionError,
            TimeoutError,
        ):
            pass
        except asyncio.CancelledError:
            raise
        except Exception:
            log.exception("simulator request handling failed")
        finally:
            try:
                writer.close()
            except Exception:
                pass

    async def _handle_inner(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        head = await asyncio.wait_for(reader.readuntil(b"\r\n\r\n"), timeout=30)
        lines = head.decode("latin-1").split("\r\n")
        try:
            method, target, _ = lines[0].split(" ", 2)
        except ValueError:
            await self._respond(writer, 400, {"error": "bad request"})
            return
        headers = {}
        for line in lines[1:]:
            if ":" in line:
                name, _, value = line.partition(":")
                headers[name.strip().lower()] = value.strip()

        parts = [unquote(p) for p in target.split("?")[0].split("/") if p]
        if method == "GET" and len(parts) == 3 and parts[0] == "cam":
            await self._serve_camera(writer, parts[1], parts[2])
        elif method == "POST" and len(parts) == 2 and parts[0] == "admin":
            body = b""
            length = int(headers.get("content-length", "0"))
            if length:
                body = await reader.readexactly(length)
            await self._serve_admin(writer, parts[1], body)
        elif method == "GET" and parts == ["healthz"]:
            await self._respond(writer, 200, {"ok": True, "cameras": len(self._states)})
        else:
            await self._respond(writer, 404, {"error": "no such resource"})

    async def _serve_camera(self, writer: asyncio.StreamWriter, tvid: str, kind: str):
        state = self._states.get(tvid)
        if state is None or kind not in ("frame", "stream"):
            await self._respond(writer, 404, {"error": f"unknown camera {tvid!r}"})
            return

        fault = state.fault
        if fault.kind is FaultKind.NO_CONNECT:
            self._abort(writer)
            return
        if fault.kind is FaultKind.STALL:
            await asyncio.sleep(fault.seconds)

        if kind == "frame":
            body = self._next_frame(state)
            header = (
                "HTTP/1.1 200 OK\r\n"
                "Content-Type: image/jpeg\r\n"
                f"Content-Length: {len(body)}\r\n"
                "Connection: close\r\n\r\n"
            ).encode("latin-1")
            if state.fault.kind is FaultKind.TRUNCATED_FRAME:
                writer.write(header + body[: len(body) // 2])
            else:
                writer.write(header + body)
            await writer.drain()
        else:
            header = (
                "HTTP/1.1 200 OK\r\n"
                f"Content-Type: multipart/x-mixed-replace; boundary={_MULTIPART_BOUNDARY}\r\n"
                "Connection: close\r\n\r\n"
            ).encode("latin-1")
            writer.write(header)
            await writer.drain()
            interval = self.scenario.frame_interval_ms / 1000.0
            while True:
                body = self._next_frame(state)
                part_head = (
                    f"--{_MULTIPART_BOUNDARY}\r\n"
                    "Content-Type: image/jpeg\r\n"
                    f"Content-Length: {len(body)}\r\n\r\n"
                ).encode("latin-1")
                if state.fault.kind is FaultKind.TRUNCATED_FRAME:
                    writer.write(part_head + body[: len(body) // 2])
                    await writer.drain()
                    return
                writer.write(part_head + body + b"\r\n")
                await writer.drain()
                await asyncio.sleep(interval)

    async def _serve_admin(self, writer: asyncio.StreamWriter, action: str, body: bytes):
        try:
            doc = json.loads(body.decode("utf-8")) if body else {}
        except (ValueError, UnicodeDecodeError):
            await self._respond(writer, 400, {"error": "bad json body"})
            return
        tvid = doc.get("tvid", "")
        state = self._states.get(tvid)
        if state is None:
            await self._respond(writer, 404, {"error": f"unknown camera {tvid!r}"})
            return
        try:
            if action == "scene":
                await self._apply(tvid, SceneClass(doc["scene"]), None)
            elif action == "fault":
                fault = doc.get("fault", "none")
                if isinstance(fault, str) and "seconds" in doc:
                    fault = {"kind": fault, "seconds": doc["seconds"]}
                await self._apply(tvid, None, Fault.parse(fault))
            else:
                await self._respond(writer, 404, {"error": f"unknown admin action {action!r}"})
                return
        except (ValueError, KeyError) as exc:
            await self._respond(writer, 400, {"error": str(exc)})
            return
        await self._respond(writer, 200, {"ok": True})

    async def _respond(self, writer: asyncio.StreamWriter, status: int, doc: dict):
        reasons = {200: "OK", 400: "Bad Request", 404: "Not Found"}
        body = json.dumps(doc).encode("utf-8")
        writer.write(
            (
                f"HTTP/1.1 {status} {reasons.get(status, 'Error')}\r\n"
                "Content-Type: application/json\r\n"
                f"Content-Length: {len(body)}\r\n"
                "Connection: close\r\n\r\n"
            ).encode("latin-1")
            + body
        )
        await writer.drain()

    def _abort(self, writer: asyncio.StreamWriter) -> None:
        # RST instead of FIN so clients observe a connection error, not EOF
        sock = writer.get_extra_info("socket")
        if sock is not None:
            try:
                sock.setsockopt(
                    socket.SOL_SOCKET, socket.SO_LINGER, struct.pack("ii", 1, 0)
                )
            except OSError:
                pass
        writer.transport.abort()


def spawn_fleet(scenario: SimScenario, host: str = "127.0.0.1", port: int = 0) -> FleetHandle:
    """Bring up the fleet; returns a started handle whose endpoints map
    tvid -> URL ready to drop into a registry document."""
    return FleetHandle(scenario, host=host, port=port).start()
