"""Feature extraction: root trajectories, contact labels, time-series
windows, and assembly of the network input/output vectors.

Vector layout (bone count B=22, phase channels C=5, no style):
  input  (588): traj_pos 26 | traj_dir 26 | traj_vel 26 | tdelta 13 |
                pose 264 | target_pose 198 | contacts 35 | phase 130
  output (757): ego_traj 42 | goal_traj 42 | pose 264 | goal_pose 264 |
                contacts 5 | phase_next 70 | phase_freq 35 | phase_amp 35
The phase slice of the input feeds the gating network; everything else
feeds the motion prediction network.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter1d, median_filter

from . import rotations as rot
from .data import MotionClip, finite_difference, write_array_store, read_array_store

log = logging.getLogger(__name__)

PHASE_CHANNELS = 5
CONTACT_CHANNELS = 5  # left foot, right foot, left hand, right hand, hip

DT_MIN_FRAMES = 1
DT_MAX_FRAMES = 60


# ---------------------------------------------------------------------------
# 2D root transforms
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RootXform:
    """Rigid ground-plane transform: position (x, z) plus unit facing."""

    position: np.ndarray
    facing: np.ndarray

    @property
    def yaw(self) -> float:
        return float(np.arctan2(self.facing[0], self.facing[1]))

    @property
    def quat(self) -> np.ndarray:
        return rot.yaw_quat(self.yaw)

    def _origin3(self) -> np.ndarray:
        return np.array([self.position[0], 0.0, self.position[1]])

    # --- 3D ---
    def point_to_local(self, p: np.ndarray) -> np.ndarray:
        return rot.rotate(rot.conjugate(self.quat), np.asarray(p) - self._origin3())

    def point_to_world(self, p: np.ndarray) -> np.ndarray:
        return rot.rotate(self.quat, np.asarray(p)) + self._origin3()

    def dir_to_local(self, d: np.ndarray) -> np.ndarray:
        return rot.rotate(rot.conjugate(self.quat), d)

    def dir_to_world(self, d: np.ndarray) -> np.ndarray:
        return rot.rotate(self.quat, d)

    def quat_to_local(self, q: np.ndarray) -> np.ndarray:
        return rot.mul(np.broadcast_to(rot.conjugate(self.quat), q.shape), q)

    def quat_to_world(self, q: np.ndarray) -> np.ndarray:
        return rot.mul(np.broadcast_to(self.quat, q.shape), q)

    # --- 2D ground plane ---
    def p2_to_local(self, p: np.ndarray) -> np.ndarray:
        return (np.asarray(p) - self.position) @ rot.rot2d(-self.yaw).T

    def p2_to_world(self, p: np.ndarray) -> np.ndarray:
        return np.asarray(p) @ rot.rot2d(self.yaw).T + self.position

    def d2_to_local(self, d: np.ndarray) -> np.ndarray:
        return np.asarray(d) @ rot.rot2d(-self.yaw).T

    def d2_to_world(self, d: np.ndarray) -> np.ndarray:
        return np.asarray(d) @ rot.rot2d(self.yaw).T


# ---------------------------------------------------------------------------
# Root trajectory
# ---------------------------------------------------------------------------


@dataclass
class RootTrajectory:
    positions: np.ndarray  # (F, 2)
    directions: np.ndarray  # (F, 2) unit
    velocities: np.ndarray  # (F, 2) m/s

    def xform(self, i: int) -> RootXform:
        i = int(np.clip(i, 0, len(self.positions) - 1))
        return RootXform(self.positions[i].copy(), self.directions[i].copy())


def compute_root_trajectory(clip: MotionClip, smooth_sigma: float = 3.0) -> RootTrajectory:
    """Hip position projected to the ground plane; facing from the
    shoulder/hip lateral axis, low-pass filtered; velocity by finite
    differences."""
    sk = clip.skeleton
    try:
        hips = sk.find("Hips")
        ls, rs = sk.find("LeftShoulder"), sk.find("RightShoulder")
        lh, rh = sk.find("LeftUpLeg"), sk.find("RightUpLeg")
    except KeyError as e:
        raise ValueError(f"skeleton lacks bones required for the root trajectory: {e}")

    pos = clip.global_positions[:, hips][:, [0, 2]].copy()

    lateral = (
        clip.global_positions[:, ls] - clip.global_positions[:, rs]
        + clip.global_positions[:, lh] - clip.global_positions[:, rh]
    )
    fwd3 = np.cross(lateral, np.broadcast_to(rot.UP, lateral.shape))
    fwd = fwd3[:, [0, 2]]
    norms = np.linalg.norm(fwd, axis=-1, keepdims=True)
    fwd = np.where(norms > 1e-9, fwd / np.maximum(norms, 1e-9), np.array([0.0, 1.0]))
    if len(fwd) > 2 and smooth_sigma > 0:
        fwd = gaussian_filter1d(fwd, smooth_sigma, axis=0, mode="nearest")
        fwd = fwd / np.linalg.norm(fwd, axis=-1, keepdims=True)

    vel = finite_difference(pos, clip.fps)
    return RootTrajectory(pos, fwd, vel)


# ---------------------------------------------------------------------------
# Contacts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ContactConfig:
    """Key joints and thresholds, channel order: LF, RF, LH, RH, hip.

    Heights in meters, velocities in m/s.  Hip "contact" marks ground
    supported sitting/lying.
    """

    joints: tuple[tuple[str, ...], ...] = (
        ("LeftToe",), ("RightToe",), ("LeftHand",), ("RightHand",), ("Hips",)
    )
    fallback_joints: tuple[tuple[str, ...], ...] = (
        ("LeftFoot",), ("RightFoot",), ("LeftHand",), ("RightHand",), ("Hips",)
    )
    height_thresholds: tuple[float, ...] = (0.05, 0.05, 0.08, 0.08, 0.20)
    velocity_thresholds: tuple[float, ...] = (0.6, 0.6, 0.6, 0.6, 0.5)


def contact_joint_indices(clip: MotionClip, config: ContactConfig = ContactConfig()) -> list[int]:
    idx = []
    for primary, fallback in zip(config.joints, config.fallback_joints):
        try:
            idx.append(clip.skeleton.find(*primary))
        except KeyError:
            idx.append(clip.skeleton.find(*fallback))
    return idx


def detect_contacts(clip: MotionClip, config: ContactConfig = ContactConfig()) -> np.ndarray:
    """Binary (F, 5) labels: joint below its height threshold AND slower
    than its velocity threshold, median-filtered over 5 frames."""
    idx = contact_joint_indices(clip, config)
    labels = np.zeros((clip.frame_count, CONTACT_CHANNELS))
    for c, j in enumerate(idx):
        height = clip.global_positions[:, j, 1]
        speed = np.linalg.norm(clip.velocities[:, j], axis=-1)
        raw = (height < config.height_thresholds[c]) & (speed < config.velocity_thresholds[c])
        labels[:, c] = median_filter(raw.astype(float), size=5, mode="nearest")
    return (labels > 0.5).astype(float)


# ---------------------------------------------------------------------------
# Time windows
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TimeWindow:
    """Uniformly sampled offsets (seconds) around a pivot frame."""

    offsets: np.ndarray

    @property
    def count(self) -> int:
        return len(self.offsets)

    def frames(self, fps: float) -> np.ndarray:
        return np.round(self.offsets * fps).astype(int)


FULL_WINDOW = TimeWindow(np.linspace(-1.0, 1.0, 13))
PAST_WINDOW = TimeWindow(np.linspace(-1.0, 0.0, 7))
FUTURE_WINDOW = TimeWindow(np.linspace(0.0, 1.0, 7))


# ---------------------------------------------------------------------------
# Pose coding
# ---------------------------------------------------------------------------


def encode_pose(positions, rotations, velocities, xform: RootXform) -> np.ndarray:
    """(B*12,) root-space pose block: positions | fwd-up rotations | velocities."""
    p = xform.point_to_local(positions)
    r = rot.encode_fwd_up(xform.quat_to_local(rotations))
    v = xform.dir_to_local(velocities)
    return np.concatenate([p.ravel(), r.ravel(), v.ravel()])


def decode_pose(flat: np.ndarray, n_bones: int, xform: RootXform):
    """Inverse of encode_pose; returns world positions, quats, velocities."""
    p = flat[: 3 * n_bones].reshape(n_bones, 3)
    r6 = flat[3 * n_bones : 9 * n_bones].reshape(n_bones, 6)
    v = flat[9 * n_bones :].reshape(n_bones, 3)
    positions = xform.point_to_world(p)
    rotations = xform.quat_to_world(rot.decode_fwd_up(r6, check=False))
    velocities = xform.dir_to_world(v)
    return positions, rotations, velocities


def encode_target_pose(positions, rotations, xform: RootXform) -> np.ndarray:
    """(B*9,) positions | fwd-up rotations, no velocities."""
    p = xform.point_to_local(positions)
    r = rot.encode_fwd_up(xform.quat_to_local(rotations))
    return np.concatenate([p.ravel(), r.ravel()])


def encode_semi_joint_pose(positions, rotations, velocities,
                           target_positions, goal: RootXform) -> np.ndarray:
    """Pose in semi-joint target frames: each joint's position is taken
    relative to the matching target joint, everything oriented by the
    target root frame."""
    q_inv = rot.conjugate(goal.quat)
    p = rot.rotate(np.broadcast_to(q_inv, positions.shape[:-1] + (4,)),
                   positions - target_positions)
    r = rot.encode_fwd_up(goal.quat_to_local(rotations))
    v = goal.dir_to_local(velocities)
    return np.concatenate([p.ravel(), r.ravel(), v.ravel()])


def decode_semi_joint_pose(flat: np.ndarray, n_bones: int,
                           target_positions, goal: RootXform):
    p = flat[: 3 * n_bones].reshape(n_bones, 3)
    r6 = flat[3 * n_bones : 9 * n_bones].reshape(n_bones, 6)
    v = flat[9 * n_bones :].reshape(n_bones, 3)
    q = goal.quat
    positions = rot.rotate(np.broadcast_to(q, p.shape[:-1] + (4,)), p) + target_positions
    rotations = goal.quat_to_world(rot.decode_fwd_up(r6, check=False))
    velocities = goal.dir_to_world(v)
    return positions, rotations, velocities


# ---------------------------------------------------------------------------
# Feature layout bookkeeping
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FeatureLayout:
    """Named, ordered slices of a flat feature vector."""

    blocks: tuple[tuple[str, int], ...]

    @property
    def width(self) -> int:
        return sum(s for _, s in self.blocks)

    def slice(self, name: str) -> slice:
        off = 0
        for n, s in self.blocks:
            if n == name:
                return slice(off, off + s)
            off += s
        raise KeyError(name)

    def to_json(self) -> list:
        return [[n, s] for n, s in self.blocks]

    @staticmethod
    def from_json(obj) -> "FeatureLayout":
        return FeatureLayout(tuple((n, int(s)) for n, s in obj))


def input_layout(n_bones: int = 22, style_dim: int = 0,
                 channels: int = PHASE_CHANNELS) -> FeatureLayout:
    blocks = [
        ("traj_pos", 2 * FULL_WINDOW.count),
        ("traj_dir", 2 * FULL_WINDOW.count),
        ("traj_vel", 2 * FULL_WINDOW.count),
        ("tdelta", FULL_WINDOW.count),
        ("pose", 12 * n_bones),
        ("target_pose", 9 * n_bones),
        ("contacts", CONTACT_CHANNELS * PAST_WINDOW.count),
        ("phase", 2 * channels * FULL_WINDOW.count),
    ]
    if style_dim:
        blocks.append(("style", style_dim))
    return FeatureLayout(tuple(blocks))


def output_layout(n_bones: int = 22, channels: int = PHASE_CHANNELS) -> FeatureLayout:
    return FeatureLayout(
        (
            ("ego_traj", 6 * FUTURE_WINDOW.count),
            ("goal_traj", 6 * FUTURE_WINDOW.count),
            ("pose", 12 * n_bones),
            ("goal_pose", 12 * n_bones),
            ("contacts", CONTACT_CHANNELS),
            ("phase_next", 2 * channels * FUTURE_WINDOW.count),
            ("phase_freq", channels * FUTURE_WINDOW.count),
            ("phase_amp", channels * FUTURE_WINDOW.count),
        )
    )


# ---------------------------------------------------------------------------
# Per-clip bundle and training pairs
# ---------------------------------------------------------------------------


@dataclass
class ClipFeatures:
    """Everything sample_training_pair needs, precomputed once per clip."""

    clip: MotionClip
    trajectory: RootTrajectory
    contacts: np.ndarray  # (F, 5)
    phase_p: np.ndarray  # (F, 2C) manifold
    phase_f: np.ndarray  # (F, C) Hz
    phase_a: np.ndarray  # (F, C)
    style: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def frame_count(self) -> int:
        return self.clip.frame_count

    def clamp(self, frames: np.ndarray) -> np.ndarray:
        return np.clip(frames, 0, self.frame_count - 1)


def assemble_features(clip: MotionClip, phase_p, phase_f, phase_a,
                      contact_config: ContactConfig = ContactConfig(),
                      style: np.ndarray | None = None) -> ClipFeatures:
    return ClipFeatures(
        clip=clip,
        trajectory=compute_root_trajectory(clip),
        contacts=detect_contacts(clip, contact_config),
        phase_p=phase_p,
        phase_f=phase_f,
        phase_a=phase_a,
        style=style if style is not None else np.zeros(0),
    )


def _traj_block(feats: ClipFeatures, frames: np.ndarray, xform: RootXform) -> np.ndarray:
    """pos | dir | vel of the trajectory at `frames`, in xform's space."""
    idx = feats.clamp(frames)
    tr = feats.trajectory
    pos = xform.p2_to_local(tr.positions[idx])
    drn = xform.d2_to_local(tr.directions[idx])
    vel = xform.d2_to_local(tr.velocities[idx])
    return np.concatenate([pos.ravel(), drn.ravel(), vel.ravel()])


def sample_training_pair(feats: ClipFeatures, i: int, dt: int) -> tuple[np.ndarray, np.ndarray]:
    """Input vector at frame i (target at i+dt) and output vector for i+1.

    Boundary windows clamp to the clip ends.  Raises on dt outside
    [DT_MIN_FRAMES, DT_MAX_FRAMES].
    """
    if not DT_MIN_FRAMES <= dt <= DT_MAX_FRAMES:
        raise ValueError(f"dt {dt} out of range [{DT_MIN_FRAMES}, {DT_MAX_FRAMES}]")
    clip = feats.clip
    fps = clip.fps
    g = int(min(i + dt, feats.frame_count - 1))
    ego = feats.trajectory.xform(i)
    goal = feats.trajectory.xform(g)

    full = FULL_WINDOW.frames(fps) + i
    past = PAST_WINDOW.frames(fps) + i
    j = min(i + 1, feats.frame_count - 1)
    future = FUTURE_WINDOW.frames(fps) + j

    # --- input ---
    x_traj = _traj_block(feats, full, goal)
    tdelta = np.maximum(0.0, (g - full.astype(float)) / fps)
    x_pose = encode_pose(clip.global_positions[i], clip.global_rotations[i],
                         clip.velocities[i], ego)
    x_target = encode_target_pose(clip.global_positions[g], clip.global_rotations[g], ego)
    x_contacts = feats.contacts[feats.clamp(past)].ravel()
    x_phase = feats.phase_p[feats.clamp(full)].ravel()
    x = np.concatenate([x_traj, tdelta, x_pose, x_target, x_contacts, x_phase])
    if feats.style.size:
        x = np.concatenate([x, feats.style])

    # --- output (next frame j) ---
    y_ego_traj = _traj_block(feats, future, ego)
    y_goal_traj = _traj_block(feats, future, goal)
    y_pose = encode_pose(clip.global_positions[j], clip.global_rotations[j],
                         clip.velocities[j], ego)
    y_goal_pose = encode_semi_joint_pose(
        clip.global_positions[j], clip.global_rotations[j], clip.velocities[j],
        clip.global_positions[g], goal,
    )
    y_contacts = feats.contacts[j]
    fut_idx = feats.clamp(future)
    y_phase = feats.phase_p[fut_idx].ravel()
    y_freq = feats.phase_f[fut_idx].ravel()
    y_amp = feats.phase_a[fut_idx].ravel()
    y = np.concatenate([y_ego_traj, y_goal_traj, y_pose, y_goal_pose,
                        y_contacts, y_phase, y_freq, y_amp])
    return x, y


# ---------------------------------------------------------------------------
# Dataset store
# ---------------------------------------------------------------------------


class FeatureNaNError(ValueError):
    pass


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    x_layout: FeatureLayout
    y_layout: FeatureLayout
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray

    def normalize_x(self, x: np.ndarray) -> np.ndarray:
        return (x - self.x_mean) / self.x_std

    def denormalize_x(self, x: np.ndarray) -> np.ndarray:
        return x * self.x_std + self.x_mean

    def normalize_y(self, y: np.ndarray) -> np.ndarray:
        return (y - self.y_mean) / self.y_std

    def denormalize_y(self, y: np.ndarray) -> np.ndarray:
        return y * self.y_std + self.y_mean


def _norm_stats(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = m.mean(axis=0)
    std = m.std(axis=0)
    # features are meters / unit vectors / seconds, so variation below
    # 1e-5 is numerical noise: pass such dimensions through unscaled
    # instead of amplifying round-off by a huge factor
    std = np.where(std < 1e-5, 1.0, std)
    return mean, std


def build_dataset(clip_feats: list[ClipFeatures], samples_per_frame: int = 1,
                  rng: np.random.Generator | None = None,
                  dt_range: tuple[int, int] = (DT_MIN_FRAMES, DT_MAX_FRAMES)) -> Dataset:
    """Sample (input, output) rows over all frames of all clips with random
    in-betweening offsets, and fit normalization statistics."""
    if not clip_feats:
        raise ValueError("no clips to build a dataset from")
    rng = rng or np.random.default_rng(0)
    xs, ys = [], []
    style_dim = max(f.style.size for f in clip_feats)
    n_bones = clip_feats[0].clip.skeleton.bone_count
    for feats in clip_feats:
        for i in range(feats.frame_count):
            for _ in range(samples_per_frame):
                dt = int(rng.integers(dt_range[0], dt_range[1] + 1))
                x, y = sample_training_pair(feats, i, dt)
                if not np.all(np.isfinite(x)) or not np.all(np.isfinite(y)):
                    bad = np.nonzero(~np.isfinite(np.concatenate([x, y])))[0]
                    raise FeatureNaNError(
                        f"non-finite feature in clip {feats.clip.sequence!r} "
                        f"frame {i}, feature index {bad[0]}"
                    )
                xs.append(x)
                ys.append(y)
    x = np.asarray(xs)
    y = np.asarray(ys)
    x_mean, x_std = _norm_stats(x)
    y_mean, y_std = _norm_stats(y)
    return Dataset(
        x=x, y=y,
        x_layout=input_layout(n_bones, style_dim),
        y_layout=output_layout(n_bones),
        x_mean=x_mean, x_std=x_std, y_mean=y_mean, y_std=y_std,
    )


def save_dataset(ds: Dataset, out_dir: str | Path) -> None:
    """JSON manifest plus little-endian float32 blobs."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "kind": "dataset",
        "version": 1,
        "samples": int(ds.x.shape[0]),
        "input_layout": ds.x_layout.to_json(),
        "output_layout": ds.y_layout.to_json(),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))
    write_array_store(out_dir / "tensors.bin", {"kind": "dataset-tensors"}, {
        "x": ds.x, "y": ds.y,
        "x_mean": ds.x_mean, "x_std": ds.x_std,
        "y_mean": ds.y_mean, "y_std": ds.y_std,
    })


def load_dataset(out_dir: str | Path) -> Dataset:
    out_dir = Path(out_dir)
    manifest = json.loads((out_dir / "manifest.json").read_text())
    _, arrays = read_array_store(out_dir / "tensors.bin")
    return Dataset(
        x=arrays["x"], y=arrays["y"],
        x_layout=FeatureLayout.from_json(manifest["input_layout"]),
        y_layout=FeatureLayout.from_json(manifest["output_layout"]),
        x_mean=arrays["x_mean"], x_std=arrays["x_std"],
        y_mean=arrays["y_mean"], y_std=arrays["y_std"],
    )
