"""Interactive drive-session service over a generated bundle.

Clients steer a kinematic-bicycle ego through the voxel world; the server is
the single authority over poses, records the trajectory, and can stream
low-resolution semantic/depth previews rendered by the raycaster. One
connection speaks either raw framed TCP or WebSocket (sniffed from the first
bytes); both carry the same length-prefixed JSON messages, so a browser and a
test harness exercise identical code.

Sessions live in the service registry, not on the connection: a dropped
client can reconnect and keep driving or export its recording.

Protocol (version 1), client -> server:
    {"type": "hello", "version": 1}
    {"type": "create_session"}
    {"type": "control", "session": s, "throttle": f, "steer": f, "dt": f,
     "seq": n?, "preview": bool?}
    {"type": "export_trajectory", "session": s}
    {"type": "close_session", "session": s}
server -> client:
    {"type": "welcome", "version": 1, "world": {...}, "tick_rate": f}
    {"type": "session_created", "session": s, "pose": {...}, "tick": 0, "time": 0.0}
    {"type": "frame", "session": s, "tick": n, "time": t, "pose": {...},
     "speed": v, "seq": n?, "preview": {...}?}
    {"type": "trajectory", "session": s, "filename": f, "trajectory_json": str}
    {"type": "session_closed", "session": s}
    {"type": "error", "code": str, "message": str}
"""

from __future__ import annotations

import base64
import io
import json
import socketserver
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import imageio
from .buffers import Camera, Trajectory, _cast_scene
from .bundle import canonical_grids_from_tracks, load_manifest, load_tracks, load_world
from .geometry import wrap_angle
from .labels import DEFAULT_PALETTE
from .netframe import (
    ProtocolError,
    decode_json,
    encode_json,
    read_frame,
    websocket_handshake,
    websocket_recv,
    websocket_send,
    write_frame,
)

PROTOCOL_VERSION = 1


def heading_camera(position, heading: float, intr: dict) -> Camera:
    """Forward-looking camera at a ground pose: x right, y down, z along heading."""
    c, s = np.cos(heading), np.sin(heading)
    rotation = np.array([[s, 0.0, c], [-c, 0.0, s], [0.0, -1.0, 0.0]])
    return Camera(
        fx=intr["fx"],
        fy=intr["fy"],
        cx=intr["cx"],
        cy=intr["cy"],
        width=intr["width"],
        height=intr["height"],
        rotation=rotation,
        position=np.asarray(position, dtype=np.float64),
    )


@dataclass
class DriveSession:
    """Server-side ego state plus the recorded pose track."""

    session_id: str
    position: np.ndarray
    heading: float
    wheelbase: float
    speed_cap: float
    steer_cap: float
    tick: int = 0
    time: float = 0.0
    speed: float = 0.0
    history: list = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)

    def __post_init__(self):
        self.history.append((self.time, self.position.copy(), self.heading))

    def advance(self, throttle: float, steer: float, dt: float) -> None:
        throttle = float(np.clip(throttle, -1.0, 1.0))
        steer = float(np.clip(steer, -1.0, 1.0))
        dt = float(np.clip(dt, 1e-3, 1.0))
        v = throttle * self.speed_cap
        delta = steer * self.steer_cap
        self.position = self.position + np.array(
            [v * np.cos(self.heading) * dt, v * np.sin(self.heading) * dt, 0.0]
        )
        self.heading = float(wrap_angle(self.heading + v / self.wheelbase * np.tan(delta) * dt))
        self.speed = v
        self.time += dt
        self.tick += 1
        self.history.append((self.time, self.position.copy(), self.heading))

    def pose_json(self) -> dict:
        return {"position": self.position.tolist(), "heading": self.heading}

    def trajectory(self, intr: dict) -> Trajectory:
        cams = tuple(heading_camera(p, h, intr) for _, p, h in self.history)
        return Trajectory(cams, np.array([t for t, _, _ in self.history]))


class SessionService:
    """Transport-independent message handler over one loaded bundle."""

    def __init__(self, bundle_dir, *, preview_size: tuple[int, int] | None = None):
        self.bundle_dir = Path(bundle_dir)
        manifest = load_manifest(self.bundle_dir)
        self.manifest = manifest
        self.world = load_world(self.bundle_dir)
        tracks = load_tracks(self.bundle_dir)
        self.dynamic = canonical_grids_from_tracks(tracks, self.world.voxel_size) if tracks else []
        cfg = manifest.get("ego", {"position": [0.0, 0.0, 1.6], "heading": 0.0})
        self.ego_origin = np.asarray(cfg["position"], dtype=np.float64)
        self.ego_heading = float(cfg["heading"])
        viewer = json.loads((self.bundle_dir / "config.json").read_text())["viewer"]
        self.viewer = viewer
        if preview_size is not None:
            self.viewer = dict(viewer)
            self.viewer["preview_width"], self.viewer["preview_height"] = preview_size
        self.sessions: dict[str, DriveSession] = {}
        self._lock = threading.Lock()
        self._counter = 0
        self._palette_table = DEFAULT_PALETTE.label_table()

    # -- message dispatch ---------------------------------------------------

    def handle(self, message: dict) -> dict:
        try:
            kind = message.get("type")
            if kind == "hello":
                return self._hello(message)
            if kind == "create_session":
                return self._create()
            if kind == "control":
                return self._control(message)
            if kind == "export_trajectory":
                return self._export(message)
            if kind == "close_session":
                return self._close(message)
            return _error("unknown_type", f"unknown message type {kind!r}")
        except _ClientError as exc:
            return _error(exc.code, str(exc))
        except Exception as exc:  # never let client input kill the service
            return _error("internal", f"{type(exc).__name__}: {exc}")

    def _hello(self, message: dict) -> dict:
        version = message.get("version")
        if version != PROTOCOL_VERSION:
            return _error("version_mismatch", f"server speaks version {PROTOCOL_VERSION}, client sent {version!r}")
        layout = self.manifest["chunk_layout"]
        return {
            "type": "welcome",
            "version": PROTOCOL_VERSION,
            "tick_rate": self.viewer["tick_rate_hz"],
            "world": {
                "chunks": layout["indices"],
                "stride_m": layout["stride_m"],
                "chunk_extent_m": layout["base_frame"]["n"] * layout["base_frame"]["cell_size"],
                "base_origin": layout["base_frame"]["origin"],
                "ego": {"position": self.ego_origin.tolist(), "heading": self.ego_heading},
            },
        }

    def _create(self) -> dict:
        with self._lock:
            self._counter += 1
            sid = f"s{self._counter}"
            session = DriveSession(
                sid,
                self.ego_origin.copy(),
                self.ego_heading,
                wheelbase=self.viewer["wheelbase_m"],
                speed_cap=self.viewer["speed_cap_mps"],
                steer_cap=self.viewer["steer_cap_rad"],
            )
            self.sessions[sid] = session
        return {
            "type": "session_created",
            "session": sid,
            "pose": session.pose_json(),
            "tick": 0,
            "time": 0.0,
        }

    def _session(self, message: dict) -> DriveSession:
        sid = message.get("session")
        session = self.sessions.get(sid)
        if session is None:
            raise _ClientError("unknown_session", f"no session {sid!r}")
        return session

    def _control(self, message: dict) -> dict:
        session = self._session(message)
        for key in ("throttle", "steer", "dt"):
            if not isinstance(message.get(key, 0.0), (int, float)):
                raise _ClientError("bad_message", f"control field {key} must be a number")
        with session.lock:
            session.advance(
                float(message.get("throttle", 0.0)),
                float(message.get("steer", 0.0)),
                float(message.get("dt", 1.0 / self.viewer["tick_rate_hz"])),
            )
            reply = {
                "type": "frame",
                "session": session.session_id,
                "tick": session.tick,
                "time": session.time,
                "pose": session.pose_json(),
                "speed": session.speed,
            }
            if "seq" in message:
                reply["seq"] = message["seq"]
            if message.get("preview"):
                reply["preview"] = self._render_preview(session)
        return reply

    def _export(self, message: dict) -> dict:
        session = self._session(message)
        intr = self._export_intrinsics()
        with session.lock:
            text = session.trajectory(intr).to_json_str()
        return {
            "type": "trajectory",
            "session": session.session_id,
            "filename": f"trajectory_{session.session_id}.json",
            "trajectory_json": text,
        }

    def _close(self, message: dict) -> dict:
        session = self._session(message)
        with self._lock:
            self.sessions.pop(session.session_id, None)
        return {"type": "session_closed", "session": session.session_id}

    # -- rendering ----------------------------------------------------------

    def _export_intrinsics(self) -> dict:
        v = self.viewer
        return {
            "fx": v["export_fx"],
            "fy": v["export_fy"],
            "cx": v["export_width"] / 2.0,
            "cy": v["export_height"] / 2.0,
            "width": v["export_width"],
            "height": v["export_height"],
        }

    def _render_preview(self, session: DriveSession) -> dict:
        w, h = int(self.viewer["preview_width"]), int(self.viewer["preview_height"])
        intr = {"fx": 0.6 * w, "fy": 0.6 * w, "cx": w / 2.0, "cy": h / 2.0, "width": w, "height": h}
        cam = heading_camera(session.position, session.heading, intr)
        dirs = cam.ray_directions().reshape(-1, 3)
        origins = np.broadcast_to(cam.position, dirs.shape)
        max_range = float(self.viewer["preview_max_range_m"])
        labels, _, _, t = _cast_scene(self.world, self.dynamic, session.time, origins, dirs, max_range)
        hit = labels >= 0
        rgb = np.full((h * w, 3), 255, dtype=np.uint8)
        rgb[hit] = np.round(self._palette_table[labels[hit]] * 255).astype(np.uint8)
        depth = np.zeros(h * w)
        depth[hit] = 1.0 - np.clip(t[hit] / max_range, 0.0, 1.0)
        depth8 = np.round(depth * 255).astype(np.uint8)
        return {
            "width": w,
            "height": h,
            "semantic_png": _png_b64(rgb.reshape(h, w, 3)),
            "depth_png": _png_b64(depth8.reshape(h, w)),
        }


class _ClientError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def _error(code: str, message: str) -> dict:
    return {"type": "error", "code": code, "message": message}


def _png_b64(image: np.ndarray) -> str:
    return base64.b64encode(imageio.encode_png(image)).decode()


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        service: SessionService = self.server.service
        rfile = self.request.makefile("rb")
        wfile = self.request.makefile("wb")
        try:
            if rfile.peek(4).startswith(b"GET"):
                websocket_handshake(rfile, wfile)
                wfile.flush()
                while True:
                    data = websocket_recv(rfile)
                    if data is None:
                        return
                    reply = self._dispatch(service, data)
                    websocket_send(wfile, reply)
                    wfile.flush()
            else:
                while True:
                    payload = read_frame(rfile)
                    if payload is None:
                        return
                    reply_payload = self._reply_bytes(service, payload)
                    write_frame(wfile, reply_payload)
                    wfile.flush()
        except (ProtocolError, ConnectionError, OSError):
            return

    def _reply_bytes(self, service: SessionService, payload: bytes) -> bytes:
        try:
            message = decode_json(payload)
        except Exception:
            return encode_json(_error("bad_message", "payload is not a JSON object"))
        return encode_json(service.handle(message))

    def _dispatch(self, service: SessionService, ws_data: bytes) -> bytes:
        # each websocket frame carries one length-prefixed message
        try:
            payload = read_frame(io.BytesIO(ws_data))
            if payload is None:
                raise ProtocolError("empty frame")
        except ProtocolError:
            inner = encode_json(_error("bad_message", "expected a length-prefixed message"))
            return _frame_bytes(inner)
        return _frame_bytes(self._reply_bytes(service, payload))


def _frame_bytes(payload: bytes) -> bytes:
    buf = io.BytesIO()
    write_frame(buf, payload)
    return buf.getvalue()


class DriveServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, service: SessionService, host: str = "127.0.0.1", port: int = 0):
        super().__init__((host, port), _Handler)
        self.service = service

    @property
    def address(self) -> tuple[str, int]:
        return self.server_address[:2]


def serve(bundle_dir, host: str = "127.0.0.1", port: int = 0, **kwargs) -> DriveServer:
    """Create a server bound to (host, port); caller drives serve_forever()."""
    return DriveServer(SessionService(bundle_dir, **kwargs), host, port)
