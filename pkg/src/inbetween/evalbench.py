"""Benchmark metrics and the interpolation baseline.

Metrics follow the common in-betweening protocol: L2P/L2Q between
generated and ground-truth sequences (positions standardized by
training-set statistics), foot skate gated by height and vertical
velocity thresholds, per-second angular joint updates, and end-pose
errors.  run_benchmark sweeps transition lengths over sliding test
windows and emits a machine-readable report plus an aligned text table.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import rotations as rot
from .data import MotionClip, Pose

FOOT_HEIGHT_THRESHOLD = 0.015  # m
FOOT_VVEL_THRESHOLD = 1.0  # m/s

DEFAULT_LENGTHS = (30, 45, 60, 75, 90, 105, 120)


# ---------------------------------------------------------------------------
# Interpolation baseline
# ---------------------------------------------------------------------------


def interp_baseline(start: Pose, target: Pose, n: int):
    """n in-between frames: global positions lerped, quaternions slerped
    (shortest arc), frame k weighted k/(n+1)."""
    if n < 1:
        raise ValueError("need at least one in-between frame")
    out_p = np.empty((n,) + start.positions.shape)
    out_q = np.empty((n,) + start.rotations.shape)
    for k in range(1, n + 1):
        t = k / (n + 1)
        out_p[k - 1] = (1 - t) * start.positions + t * target.positions
        out_q[k - 1] = rot.slerp(start.rotations, target.rotations, t)
    return out_p, out_q


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def l2p(generated: np.ndarray, ground_truth: np.ndarray,
        mean: np.ndarray | float = 0.0, std: np.ndarray | float = 1.0) -> float:
    """Mean over frames of the L2 norm of concatenated per-joint global
    position differences, standardized per dimension."""
    generated = np.asarray(generated, dtype=np.float64)
    ground_truth = np.asarray(ground_truth, dtype=np.float64)
    if generated.shape != ground_truth.shape:
        raise ValueError(f"shape mismatch {generated.shape} vs {ground_truth.shape}")
    a = (generated - mean) / std
    b = (ground_truth - mean) / std
    diff = (a - b).reshape(a.shape[0], -1)
    return float(np.mean(np.linalg.norm(diff, axis=-1)))


def l2q(generated: np.ndarray, ground_truth: np.ndarray) -> float:
    """Mean over frames of the L2 norm of concatenated hemisphere-aligned
    global quaternion differences."""
    generated = np.asarray(generated, dtype=np.float64)
    ground_truth = np.asarray(ground_truth, dtype=np.float64)
    if generated.shape != ground_truth.shape:
        raise ValueError(f"shape mismatch {generated.shape} vs {ground_truth.shape}")
    a = rot.hemisphere_align(rot.normalize(generated), rot.normalize(ground_truth))
    diff = (a - rot.normalize(ground_truth)).reshape(a.shape[0], -1)
    return float(np.mean(np.linalg.norm(diff, axis=-1)))


def foot_skate(foot_positions: np.ndarray, fps: float = 30.0) -> float:
    """Mean per-frame horizontal foot displacement (cm), accumulated only
    while the foot is below FOOT_HEIGHT_THRESHOLD and its vertical speed
    is below FOOT_VVEL_THRESHOLD.  foot_positions: (T, n_feet, 3)."""
    p = np.asarray(foot_positions, dtype=np.float64)
    if p.ndim == 2:
        p = p[:, None, :]
    if p.shape[0] < 2:
        return 0.0
    horiz = np.linalg.norm(np.diff(p[..., [0, 2]], axis=0), axis=-1)  # (T-1, feet) m
    vvel = np.abs(np.diff(p[..., 1], axis=0)) * fps
    height = p[1:, :, 1]
    gated = horiz * ((height < FOOT_HEIGHT_THRESHOLD) & (vvel < FOOT_VVEL_THRESHOLD))
    return float(np.mean(np.sum(gated, axis=1))) * 100.0


def angular_joint_updates(local_rotations: np.ndarray, fps: float = 30.0) -> float:
    """Mean over joints and frames of the geodesic angle between
    consecutive local rotations, times fps, in deg/s."""
    q = np.asarray(local_rotations, dtype=np.float64)
    if q.shape[0] < 2:
        raise ValueError("need at least 2 frames")
    ang = rot.geodesic_angle(q[1:], q[:-1])  # (T-1, B) rad
    return float(np.rad2deg(np.mean(ang)) * fps)


def end_pose_error(final_positions, final_rotations, target_positions,
                   target_rotations) -> tuple[float, float]:
    """Mean per-bone global position distance (cm) and geodesic rotation
    angle (deg) between the final generated frame and the target."""
    pos = float(np.mean(np.linalg.norm(
        np.asarray(final_positions) - np.asarray(target_positions), axis=-1))) * 100.0
    ang = float(np.rad2deg(np.mean(rot.geodesic_angle(
        np.asarray(final_rotations), np.asarray(target_rotations)))))
    return pos, ang


def position_stats(clips: list[MotionClip]) -> tuple[np.ndarray, np.ndarray]:
    """Per-dimension global-position mean/std over a training set, used to
    standardize L2P."""
    stacked = np.concatenate([c.global_positions.reshape(-1, 3) for c in clips])
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    return mean, np.where(std < 1e-8, 1.0, std)


# ---------------------------------------------------------------------------
# Benchmark harness
# ---------------------------------------------------------------------------


@dataclass
class MetricsReport:
    lengths: tuple
    rows: dict  # method -> metric -> {length: value or None}
    ground_truth: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "lengths": list(self.lengths),
            "rows": self.rows,
            "ground_truth": self.ground_truth,
            "failures": self.failures,
            "metadata": self.metadata,
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    def format_table(self) -> str:
        lines = []
        width = 12
        header = "Frames".ljust(width) + "".join(str(l).rjust(8) for l in self.lengths) + "AVG".rjust(8)
        for metric in ("l2p", "l2q", "foot_skate", "angular_updates"):
            lines.append(metric)
            lines.append(header)
            if metric in ("foot_skate", "angular_updates") and metric in self.ground_truth:
                lines.append("GroundTruth".ljust(width)
                             + f"{self.ground_truth[metric]:8.2f}")
            for method, metrics in self.rows.items():
                vals = [metrics.get(metric, {}).get(str(l)) for l in self.lengths]
                cells = "".join(
                    (f"{v:8.2f}" if v is not None else "   --   ") for v in vals
                )
                present = [v for v in vals if v is not None]
                avg = f"{np.mean(present):8.2f}" if present else "   --   "
                lines.append(method.ljust(width) + cells + avg)
            lines.append("")
        return "\n".join(lines)


def _window_starts(frame_count: int, length: int, stride: int) -> np.ndarray:
    last = frame_count - length - 2
    if last < 0:
        return np.array([], dtype=int)
    return np.arange(0, last + 1, stride)


def run_benchmark(test_clips: list[MotionClip], lengths=DEFAULT_LENGTHS,
                  pos_mean: np.ndarray | float = 0.0, pos_std: np.ndarray | float = 1.0,
                  model_generate=None, stride: int = 20, seed: int = 0,
                  max_windows_per_length: int | None = None) -> MetricsReport:
    """Sweep transition lengths over sliding test windows.

    model_generate, when given, is called as
    model_generate(clip_index, start_frame, length) and must return
    (positions (L,B,3), rotations (L,B,4)) in world space; exceptions are
    recorded per window without aborting the run.
    """
    rng = np.random.default_rng(seed)
    methods = ["interp"] + (["model"] if model_generate is not None else [])
    rows = {m: {k: {} for k in ("l2p", "l2q", "foot_skate", "angular_updates",
                                "end_pos_cm", "end_rot_deg")} for m in methods}
    failures = []

    foot_idx = []
    sk = test_clips[0].skeleton if test_clips else None
    if sk is not None:
        for names in (("LeftToe",), ("RightToe",), ("LeftFoot",), ("RightFoot",)):
            try:
                foot_idx.append(sk.find(*names))
            except KeyError:
                pass
        foot_idx = foot_idx[:2] if len(foot_idx) >= 2 else foot_idx

    # ground-truth reference numbers over all test windows
    gt_angular, gt_skate = [], []

    for L in lengths:
        acc = {m: {k: [] for k in rows[m]} for m in methods}
        for ci, clip in enumerate(test_clips):
            starts = _window_starts(clip.frame_count, L, stride)
            if max_windows_per_length is not None and len(starts) > max_windows_per_length:
                starts = rng.choice(starts, size=max_windows_per_length, replace=False)
                starts.sort()
            for s in starts:
                gt_p = clip.global_positions[s + 1 : s + 1 + L]
                gt_q = clip.global_rotations[s + 1 : s + 1 + L]
                gt_local = clip.local_rotations[s : s + 2 + L]
                gt_angular.append(angular_joint_updates(gt_local, clip.fps))
                if foot_idx:
                    gt_skate.append(foot_skate(
                        clip.global_positions[s : s + 2 + L][:, foot_idx], clip.fps))
                tgt_p = clip.global_positions[s + 1 + L]
                tgt_q = clip.global_rotations[s + 1 + L]

                for method in methods:
                    try:
                        if method == "interp":
                            gen_p, gen_q = interp_baseline(clip.pose(s), clip.pose(s + 1 + L), L)
                        else:
                            gen_p, gen_q = model_generate(ci, int(s), int(L))
                        acc[method]["l2p"].append(l2p(gen_p, gt_p, pos_mean, pos_std))
                        acc[method]["l2q"].append(l2q(gen_q, gt_q))
                        if foot_idx:
                            acc[method]["foot_skate"].append(
                                foot_skate(gen_p[:, foot_idx], clip.fps))
                        locals_seq = _global_to_local(clip, gen_q)
                        acc[method]["angular_updates"].append(
                            angular_joint_updates(locals_seq, clip.fps))
                        pe, re_ = end_pose_error(gen_p[-1], gen_q[-1], tgt_p, tgt_q)
                        acc[method]["end_pos_cm"].append(pe)
                        acc[method]["end_rot_deg"].append(re_)
                    except Exception as exc:  # record, keep sweeping
                        failures.append({"method": method, "clip": ci,
                                         "start": int(s), "length": int(L),
                                         "error": str(exc)})
        for method in methods:
            for k, vals in acc[method].items():
                rows[method][k][str(L)] = float(np.mean(vals)) if vals else None

    report = MetricsReport(
        lengths=tuple(lengths),
        rows=rows,
        ground_truth={
            "angular_updates": float(np.mean(gt_angular)) if gt_angular else None,
            "foot_skate": float(np.mean(gt_skate)) if gt_skate else None,
        },
        failures=failures,
        metadata={"stride": stride, "seed": seed,
                  "windows_capped": max_windows_per_length},
    )
    return report


def _global_to_local(clip: MotionClip, global_q: np.ndarray) -> np.ndarray:
    """Local rotations from a generated global-rotation sequence."""
    sk = clip.skeleton
    local = np.empty_like(global_q)
    local[:, 0] = global_q[:, 0]
    for j in range(1, sk.bone_count):
        local[:, j] = rot.mul(rot.conjugate(global_q[:, sk.parents[j]]), global_q[:, j])
    return local
