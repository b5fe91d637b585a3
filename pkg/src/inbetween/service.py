"""Session-oriented authoring service.

HTTP endpoints cover session CRUD, clip browsing, keyframe lookup,
smooth-path previews, transition export, and a websocket channel that
streams generated frames as the autoregressive runtime produces them.
Sessions and generated transitions persist in a single JSON store and
survive restarts.  Each session serializes its generations; the model
checkpoint is shared read-only across sessions.
"""

from __future__ import annotations

import json
import os
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect
from pydantic import BaseModel, Field, field_validator
from scipy.interpolate import CubicSpline

from . import runtime
from .data import MotionClip, Pose, write_bvh
from .features import FUTURE_WINDOW, ClipFeatures
from .network import Predictor
from .runtime import FPS, Controls, Traj, generate_transition, state_from_clip

MIN_DURATION = 1.0 / FPS
MAX_DURATION = 20.0
PATH_PREVIEW_SAMPLES = 200


# ---------------------------------------------------------------------------
# Request / response schemas
# ---------------------------------------------------------------------------


class KeyframeRef(BaseModel):
    """A pose addressed as clip:frame."""

    clip: str
    frame: int = Field(ge=0)


class PathKeyframe(BaseModel):
    position: list[float] = Field(min_length=2, max_length=2)  # ground plane (x, z)
    time: float
    facing: list[float] | None = Field(default=None, min_length=2, max_length=2)


class SmoothPathRequest(BaseModel):
    keyframes: list[PathKeyframe] = Field(min_length=2)
    samples: int = Field(default=PATH_PREVIEW_SAMPLES, ge=2, le=5000)
    closed: bool = False


class PathPresetRequest(BaseModel):
    preset: str  # circle | square | star | custom
    scale: float = Field(default=2.0, gt=0.0)
    center: list[float] = Field(default=[0.0, 0.0], min_length=2, max_length=2)
    points: list[list[float]] | None = None  # custom polyline
    samples: int = Field(default=PATH_PREVIEW_SAMPLES, ge=2, le=5000)

    @field_validator("preset")
    @classmethod
    def _known_preset(cls, v):
        if v not in ("circle", "square", "star", "custom"):
            raise ValueError(f"unknown preset {v!r}")
        return v


class PathSpec(BaseModel):
    """A sampled path: times normalized to [0, 1], positions on the
    ground plane, unit facing directions."""

    times: list[float]
    positions: list[list[float]]
    facings: list[list[float]]
    control_points: list[list[float]] = []
    preset: str | None = None


class TransitionRequestModel(BaseModel):
    start: KeyframeRef
    target: KeyframeRef
    duration: float = Field(ge=MIN_DURATION, le=MAX_DURATION)
    tau: float = Field(default=0.0, ge=0.0, le=1.0)
    path: PathSpec | None = None
    style: str | None = None
    seed: int = 0

    @field_validator("path")
    @classmethod
    def _path_long_enough(cls, v):
        if v is not None and len(v.positions) < 2:
            raise ValueError("path needs at least 2 points")
        return v


class SessionUpdate(BaseModel):
    keyframes: list[KeyframeRef] | None = None
    path: PathSpec | None = None


# ---------------------------------------------------------------------------
# Persistence: single-file JSON store
# ---------------------------------------------------------------------------

STORE_VERSION = 1


class Store:
    """Single-file embedded store for sessions and transitions.

    Writes are atomic (temp file + rename) so a crash never corrupts the
    store; records are plain JSON and byte-identical across restarts.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        if self.path.exists():
            self.data = json.loads(self.path.read_text())
            if self.data.get("version") != STORE_VERSION:
                raise ValueError(f"unsupported store version {self.data.get('version')}")
        else:
            self.data = {"version": STORE_VERSION, "sessions": {}, "transitions": {}}

    def _flush(self) -> None:
        tmp = self.path.with_suffix(".tmp")
        tmp.write_text(json.dumps(self.data, sort_keys=True))
        os.replace(tmp, self.path)

    def put(self, table: str, key: str, record: dict) -> None:
        # canonicalize key order so a record serializes byte-identically
        # before and after a restart
        record = json.loads(json.dumps(record, sort_keys=True))
        with self._lock:
            self.data[table][key] = record
            self._flush()

    def get(self, table: str, key: str) -> dict | None:
        with self._lock:
            return self.data[table].get(key)

    def delete(self, table: str, key: str) -> bool:
        with self._lock:
            if key in self.data[table]:
                del self.data[table][key]
                self._flush()
                return True
            return False

    def keys(self, table: str) -> list[str]:
        with self._lock:
            return sorted(self.data[table])


# ---------------------------------------------------------------------------
# Path authoring
# ---------------------------------------------------------------------------


def smooth_path(positions: np.ndarray, times: np.ndarray,
                facings: np.ndarray | None = None, samples: int = PATH_PREVIEW_SAMPLES,
                closed: bool = False) -> dict:
    """Piecewise-cubic interpolation of ground-plane control points.

    Positions pass through every control point with tangent-continuous
    (C2) segments; facing directions default to the path tangent and are
    interpolated along the shortest arc when given explicitly.
    """
    positions = np.asarray(positions, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    if positions.ndim != 2 or positions.shape[1] != 2:
        raise ValueError("positions must be (K, 2) ground-plane points")
    if len(times) != len(positions) or len(times) < 2:
        raise ValueError("need one time per control point, at least 2")
    if np.any(np.diff(times) <= 0):
        raise ValueError("times must be strictly increasing")

    if closed:
        # periodic spline: repeat the first point one average segment later
        seg = (times[-1] - times[0]) / (len(times) - 1)
        t_fit = np.concatenate([times, [times[-1] + seg]])
        p_fit = np.vstack([positions, positions[:1]])
        spline = CubicSpline(t_fit, p_fit, bc_type="periodic")
        t_lo, t_hi = t_fit[0], t_fit[-1]
    else:
        t_fit = times
        spline = CubicSpline(times, positions, bc_type="natural")
        t_lo, t_hi = times[0], times[-1]

    # sample uniformly but always include the control-point parameters so
    # the output passes through every control point exactly
    ts = np.unique(np.concatenate([np.linspace(t_lo, t_hi, samples), t_fit]))
    pts = spline(ts)
    tangents = spline(ts, 1)

    if facings is None:
        fac = tangents
    else:
        facings = np.asarray(facings, dtype=np.float64)
        ang = np.unwrap(np.arctan2(facings[:, 0], facings[:, 1]))
        if closed:
            ang = np.concatenate([ang, ang[:1]])
            ang_t = t_fit
        else:
            ang_t = times
        a = np.interp(ts, ang_t, ang)
        fac = np.stack([np.sin(a), np.cos(a)], axis=-1)
    norms = np.linalg.norm(fac, axis=-1, keepdims=True)
    fac = np.where(norms > 1e-9, fac / np.maximum(norms, 1e-9), np.array([0.0, 1.0]))

    span = t_hi - t_lo
    return {
        "times": ((ts - t_lo) / span).tolist(),
        "positions": pts.tolist(),
        "facings": fac.tolist(),
        "control_points": positions.tolist(),
    }


def _preset_control_points(preset: str, scale: float, center: np.ndarray) -> np.ndarray:
    if preset == "circle":
        a = np.linspace(0.0, 2.0 * np.pi, 13)[:-1]
        return center + scale * np.stack([np.cos(a), np.sin(a)], axis=-1)
    if preset == "square":
        half = scale / 2.0
        return center + half * np.array(
            [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]])
    if preset == "star":
        a = np.linspace(0.0, 2.0 * np.pi, 11)[:-1] + np.pi / 2.0
        r = np.where(np.arange(10) % 2 == 0, scale, 0.45 * scale)
        return center + r[:, None] * np.stack([np.cos(a), np.sin(a)], axis=-1)
    raise ValueError(f"unknown preset {preset!r}")


def preset_path(preset: str, scale: float = 2.0, center=(0.0, 0.0),
                points: list | None = None, samples: int = PATH_PREVIEW_SAMPLES) -> dict:
    """Build a sampled path from a named preset or a custom polyline."""
    center = np.asarray(center, dtype=np.float64)
    if preset == "custom":
        if points is None or len(points) < 2:
            raise ValueError("custom path needs at least 2 points")
        ctrl = np.asarray(points, dtype=np.float64)
        closed = False
    else:
        ctrl = _preset_control_points(preset, scale, center)
        closed = True
    times = np.arange(len(ctrl), dtype=np.float64)
    out = smooth_path(ctrl, times, samples=samples, closed=closed)
    out["preset"] = preset
    return out


def path_control(spec: PathSpec, duration: float):
    """Turn a sampled path into a desired-trajectory callable for the
    runtime: normalized path time is stretched over the transition."""
    times = np.asarray(spec.times, dtype=np.float64) * duration
    pos = np.asarray(spec.positions, dtype=np.float64)
    fac = np.asarray(spec.facings, dtype=np.float64)
    ang = np.unwrap(np.arctan2(fac[:, 0], fac[:, 1]))
    # finite-difference velocities along the path
    vel = np.gradient(pos, times, axis=0, edge_order=1)

    def desired(elapsed: float) -> Traj:
        tq = np.clip(elapsed + FUTURE_WINDOW.offsets, times[0], times[-1])
        p = np.stack([np.interp(tq, times, pos[:, 0]),
                      np.interp(tq, times, pos[:, 1])], axis=-1)
        a = np.interp(tq, times, ang)
        d = np.stack([np.sin(a), np.cos(a)], axis=-1)
        v = np.stack([np.interp(tq, times, vel[:, 0]),
                      np.interp(tq, times, vel[:, 1])], axis=-1)
        return Traj(p, d, v)

    return desired


# ---------------------------------------------------------------------------
# Engine
# ---------------------------------------------------------------------------


@dataclass
class AuthoringEngine:
    """Shared read-only model plus per-session generation locks."""

    predictor: Predictor
    clips: dict[str, ClipFeatures]
    store: Store
    style_labels: tuple[str, ...] = ()
    _locks: dict = field(default_factory=dict)
    _locks_guard: threading.Lock = field(default_factory=threading.Lock)

    def session_lock(self, session_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(session_id, threading.Lock())

    # -- pose lookup --------------------------------------------------------

    def resolve_pose(self, ref: KeyframeRef) -> Pose:
        feats = self.clips.get(ref.clip)
        if feats is None:
            raise HTTPException(404, f"unknown clip {ref.clip!r}")
        if not 0 <= ref.frame < feats.frame_count:
            raise HTTPException(404, f"frame {ref.frame} out of range "
                                     f"(clip has {feats.frame_count})")
        return feats.clip.pose(ref.frame)

    # -- generation ---------------------------------------------------------

    def style_vector(self, label: str | None) -> np.ndarray:
        if not self.style_labels:
            return np.zeros(0)
        vec = np.zeros(len(self.style_labels))
        if label is not None:
            if label not in self.style_labels:
                raise HTTPException(422, f"unknown style {label!r}")
            vec[self.style_labels.index(label)] = 1.0
        return vec

    def generate_stream(self, session_id: str, req: TransitionRequestModel):
        """Yield frame dicts, then a completion dict with the persisted
        transition record.  The caller holds the session lock."""
        feats = self.clips.get(req.start.clip)
        if feats is None:
            raise HTTPException(404, f"unknown clip {req.start.clip!r}")
        target = self.resolve_pose(req.target)
        self.resolve_pose(req.start)  # range check

        state = state_from_clip(feats, req.start.frame, target, req.duration)
        controls = Controls(
            tau=req.tau,
            desired_path=(path_control(req.path, req.duration)
                          if req.path is not None and req.tau > 0.0 else None),
            style=self.style_vector(req.style),
        )
        n_frames = int(np.ceil(req.duration * FPS - 1e-9))
        frames = []
        predictor = self.predictor
        for i in range(n_frames):
            state, pose, info = runtime.step(state, predictor, controls)
            frame = {
                "index": i,
                "time": round((i + 1) / FPS, 9),
                "positions": pose.positions.tolist(),
                "rotations": pose.rotations.tolist(),
                "contacts": info["contacts"].tolist(),
                "lambda": info["lambda"],
                "phase": info["phase"].tolist(),
            }
            frames.append(frame)
            yield {"type": "frame", **frame}

        final = frames[-1]
        pos_err = float(np.mean(np.linalg.norm(
            np.asarray(final["positions"]) - target.positions, axis=-1))) * 100.0
        from . import rotations as rot
        rot_err = float(np.rad2deg(np.mean(rot.geodesic_angle(
            np.asarray(final["rotations"]), target.rotations))))

        transition_id = uuid.uuid4().hex
        record = {
            "id": transition_id,
            "session": session_id,
            "request": req.model_dump(),
            "frames": frames,
            "end_pose_error": {"position_cm": pos_err, "rotation_deg": rot_err},
            "metrics": {"frame_count": len(frames), "duration": req.duration},
            "created_at": time.time(),
        }
        self.store.put("transitions", transition_id, record)
        session = self.store.get("sessions", session_id)
        if session is not None:
            session["transitions"].append(transition_id)
            session["updated_at"] = time.time()
            self.store.put("sessions", session_id, session)
        yield {"type": "complete", "transition": record}

    # -- export -------------------------------------------------------------

    def transition_clip(self, record: dict) -> MotionClip:
        frames = record["frames"]
        skeleton = next(iter(self.clips.values())).clip.skeleton
        poses = []
        for f in frames:
            p = np.asarray(f["positions"])
            q = np.asarray(f["rotations"])
            poses.append(Pose(positions=p, rotations=q,
                              velocities=np.zeros_like(p),
                              root_position=np.array([p[0, 0], p[0, 2]]),
                              root_facing=np.array([0.0, 1.0])))
        transition = runtime.GeneratedTransition(
            frames=poses,
            contacts=np.asarray([f["contacts"] for f in frames]),
            lambdas=np.asarray([f["lambda"] for f in frames]),
            phases=np.asarray([f["phase"] for f in frames]),
            end_position_error_cm=record["end_pose_error"]["position_cm"],
            end_rotation_error_deg=record["end_pose_error"]["rotation_deg"],
            duration=record["metrics"]["duration"],
        )
        return runtime.transition_to_clip(transition, skeleton)


# ---------------------------------------------------------------------------
# FastAPI app
# ---------------------------------------------------------------------------


def create_app(engine: AuthoringEngine) -> FastAPI:
    app = FastAPI(title="motion in-betweening authoring service")
    app.state.engine = engine

    # -- sessions -----------------------------------------------------------

    @app.post("/sessions", status_code=201)
    def create_session():
        sid = uuid.uuid4().hex
        now = time.time()
        record = {"id": sid, "keyframes": [], "path": None,
                  "transitions": [], "created_at": now, "updated_at": now}
        engine.store.put("sessions", sid, record)
        return record

    @app.get("/sessions")
    def list_sessions():
        return [engine.store.get("sessions", k) for k in engine.store.keys("sessions")]

    @app.get("/sessions/{sid}")
    def get_session(sid: str):
        record = engine.store.get("sessions", sid)
        if record is None:
            raise HTTPException(404, f"unknown session {sid!r}")
        return record

    @app.patch("/sessions/{sid}")
    def update_session(sid: str, update: SessionUpdate):
        record = engine.store.get("sessions", sid)
        if record is None:
            raise HTTPException(404, f"unknown session {sid!r}")
        if update.keyframes is not None:
            for kf in update.keyframes:
                engine.resolve_pose(kf)  # validate
            record["keyframes"] = [kf.model_dump() for kf in update.keyframes]
        if update.path is not None:
            record["path"] = update.path.model_dump()
        record["updated_at"] = time.time()
        engine.store.put("sessions", sid, record)
        return record

    @app.delete("/sessions/{sid}", status_code=204)
    def delete_session(sid: str):
        if not engine.store.delete("sessions", sid):
            raise HTTPException(404, f"unknown session {sid!r}")

    # -- clips and poses ----------------------------------------------------

    @app.get("/clips")
    def list_clips():
        out = []
        for name, feats in sorted(engine.clips.items()):
            out.append({"name": name, "frames": feats.frame_count,
                        "fps": feats.clip.fps,
                        "bones": list(feats.clip.skeleton.names)})
        return out

    @app.get("/clips/{name}/poses/{frame}")
    def get_pose(name: str, frame: int):
        pose = engine.resolve_pose(KeyframeRef(clip=name, frame=frame))
        return {
            "clip": name, "frame": frame,
            "positions": pose.positions.tolist(),
            "rotations": pose.rotations.tolist(),
            "root_position": pose.root_position.tolist(),
            "root_facing": pose.root_facing.tolist(),
        }

    # -- paths --------------------------------------------------------------

    @app.post("/path/smooth")
    def smooth(req: SmoothPathRequest):
        try:
            return smooth_path(
                np.asarray([k.position for k in req.keyframes]),
                np.asarray([k.time for k in req.keyframes]),
                facings=(np.asarray([k.facing for k in req.keyframes])
                         if all(k.facing is not None for k in req.keyframes) else None),
                samples=req.samples, closed=req.closed,
            )
        except ValueError as exc:
            raise HTTPException(422, str(exc))

    @app.post("/path/preset")
    def preset(req: PathPresetRequest):
        try:
            return preset_path(req.preset, req.scale, req.center,
                               req.points, req.samples)
        except ValueError as exc:
            raise HTTPException(422, str(exc))

    # -- generation ---------------------------------------------------------

    @app.websocket("/sessions/{sid}/generate")
    async def generate(ws: WebSocket, sid: str):
        await ws.accept()
        if engine.store.get("sessions", sid) is None:
            await ws.send_json({"type": "error", "error": f"unknown session {sid!r}"})
            await ws.close()
            return
        try:
            raw = await ws.receive_json()
            req = TransitionRequestModel.model_validate(raw)
        except WebSocketDisconnect:
            return
        except Exception as exc:
            await ws.send_json({"type": "error", "error": str(exc)})
            await ws.close()
            return

        lock = engine.session_lock(sid)
        if not lock.acquire(blocking=False):
            await ws.send_json({"type": "error", "error": "busy",
                                "detail": "a generation is already running "
                                          "in this session"})
            await ws.close()
            return
        last_good = -1
        try:
            for message in engine.generate_stream(sid, req):
                await ws.send_json(message)
                if message["type"] == "frame":
                    last_good = message["index"]
        except HTTPException as exc:
            await ws.send_json({"type": "error", "error": exc.detail,
                                "last_frame_index": last_good})
        except Exception as exc:
            await ws.send_json({"type": "error", "error": str(exc),
                                "last_frame_index": last_good})
        finally:
            lock.release()
            await ws.close()

    # -- transitions and export ---------------------------------------------

    @app.get("/transitions/{tid}")
    def get_transition(tid: str):
        record = engine.store.get("transitions", tid)
        if record is None:
            raise HTTPException(404, f"unknown transition {tid!r}")
        return record

    @app.get("/transitions/{tid}/export")
    def export(tid: str, format: str = "json"):
        record = engine.store.get("transitions", tid)
        if record is None:
            raise HTTPException(404, f"unknown transition {tid!r}")
        if format == "json":
            return record
        if format == "bvh":
            from fastapi.responses import PlainTextResponse
            import tempfile

            clip = engine.transition_clip(record)
            with tempfile.NamedTemporaryFile("r", suffix=".bvh") as tmp:
                write_bvh(clip, tmp.name)
                text = Path(tmp.name).read_text()
            return PlainTextResponse(text, media_type="application/x-bvh")
        raise HTTPException(422, f"unknown format {format!r}")

    @app.get("/info")
    def info():
        return {
            "input_width": engine.predictor.x_layout.width,
            "output_width": engine.predictor.y_layout.width,
            "fps": FPS,
            "duration_bounds": [MIN_DURATION, MAX_DURATION],
            "styles": list(engine.style_labels),
            "clips": sorted(engine.clips),
        }

    return app
