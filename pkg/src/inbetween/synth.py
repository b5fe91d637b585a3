"""Procedural motion generators.

These act as analytic oracles for the test suite (walk speed, turn rate,
contact schedules, gait period are all known by construction) and provide
training material for the overfit pipeline checks when no mocap data is
on disk.  All clips are FK-consistent 22-bone skeletons at 30 fps.
"""

from __future__ import annotations

import numpy as np

from . import rotations as rot
from .data import MotionClip, Skeleton

FPS = 30.0

_BONES = [
    # name, parent, offset (m); left is +x, forward +z, up +y
    ("Hips", -1, (0.0, 0.0, 0.0)),
    ("LeftUpLeg", 0, (0.10, 0.0, 0.0)),
    ("LeftLeg", 1, (0.0, -0.42, 0.0)),
    ("LeftFoot", 2, (0.0, -0.40, 0.0)),
    ("LeftToe", 3, (0.0, -0.06, 0.12)),
    ("RightUpLeg", 0, (-0.10, 0.0, 0.0)),
    ("RightLeg", 5, (0.0, -0.42, 0.0)),
    ("RightFoot", 6, (0.0, -0.40, 0.0)),
    ("RightToe", 7, (0.0, -0.06, 0.12)),
    ("Spine", 0, (0.0, 0.10, 0.0)),
    ("Spine1", 9, (0.0, 0.12, 0.0)),
    ("Spine2", 10, (0.0, 0.12, 0.0)),
    ("Neck", 11, (0.0, 0.12, 0.0)),
    ("Head", 12, (0.0, 0.10, 0.0)),
    ("LeftShoulder", 11, (0.06, 0.10, 0.0)),
    ("LeftArm", 14, (0.12, 0.0, 0.0)),
    ("LeftForeArm", 15, (0.0, -0.26, 0.0)),
    ("LeftHand", 16, (0.0, -0.25, 0.0)),
    ("RightShoulder", 11, (-0.06, 0.10, 0.0)),
    ("RightArm", 18, (-0.12, 0.0, 0.0)),
    ("RightForeArm", 19, (0.0, -0.26, 0.0)),
    ("RightHand", 20, (0.0, -0.25, 0.0)),
]

HIP_HEIGHT = 0.80  # legs noticeably bent at rest, keeps IK targets reachable
STANCE_ANKLE_HEIGHT = 0.06  # puts the toe joint on the ground


def make_skeleton() -> Skeleton:
    names = tuple(b[0] for b in _BONES)
    parents = tuple(b[1] for b in _BONES)
    offsets = np.array([b[2] for b in _BONES])
    return Skeleton(names, parents, offsets)


def two_bone_ik(a: np.ndarray, target: np.ndarray, l1: float, l2: float, pole: np.ndarray):
    """Analytic hip-knee-ankle solve.

    Returns (knee, ankle).  Unreachable targets clamp to full extension
    along the hip-target ray.
    """
    a = np.asarray(a, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    diff = target - a
    d = np.linalg.norm(diff)
    d = np.clip(d, abs(l1 - l2) + 1e-6, l1 + l2 - 1e-9)
    u = diff / np.linalg.norm(diff)
    ankle = a + u * d
    cos_alpha = np.clip((l1 * l1 + d * d - l2 * l2) / (2.0 * l1 * d), -1.0, 1.0)
    sin_alpha = np.sqrt(max(0.0, 1.0 - cos_alpha * cos_alpha))
    w = pole - np.dot(pole, u) * u
    wn = np.linalg.norm(w)
    if wn < 1e-9:
        # pole degenerate; pick any perpendicular
        w = np.cross(u, [0.0, 1.0, 0.0])
        if np.linalg.norm(w) < 1e-9:
            w = np.cross(u, [1.0, 0.0, 0.0])
        wn = np.linalg.norm(w)
    w = w / wn
    knee = a + l1 * (u * cos_alpha + w * sin_alpha)
    return knee, ankle


def _look_down(direction: np.ndarray, fwd_hint: np.ndarray) -> np.ndarray:
    """Rotation whose local -Y maps to `direction`, forward near fwd_hint."""
    y = -direction / np.linalg.norm(direction)
    z = fwd_hint - np.dot(fwd_hint, y) * y
    zn = np.linalg.norm(z)
    if zn < 1e-9:
        z = np.array([0.0, 0.0, 1.0]) - y * y[2]
        zn = np.linalg.norm(z)
    z = z / zn
    x = np.cross(y, z)
    m = np.stack([x, y, z], axis=-1)
    return rot.from_matrix(m)


def _assemble(skeleton: Skeleton, grot: np.ndarray, root_pos: np.ndarray,
              sequence: str, subject: int | None) -> MotionClip:
    """Local channels from global rotations, then finalize (FK + velocities)."""
    n = grot.shape[0]
    local = np.empty_like(grot)
    local[:, 0] = grot[:, 0]
    for j in range(1, skeleton.bone_count):
        local[:, j] = rot.mul(rot.conjugate(grot[:, skeleton.parents[j]]), grot[:, j])
    return MotionClip(
        skeleton=skeleton,
        fps=FPS,
        local_rotations=rot.normalize(local),
        root_translations=root_pos,
        subject=subject,
        sequence=sequence,
    ).finalize()


def make_static_clip(n_frames: int = 60, subject: int | None = 1) -> MotionClip:
    """Standing rest pose facing +Z, no motion."""
    sk = make_skeleton()
    grot = np.zeros((n_frames, sk.bone_count, 4))
    grot[..., 0] = 1.0
    # bend knees slightly so the ankle lands at stance height
    root = np.zeros((n_frames, 3))
    root[:, 1] = HIP_HEIGHT
    clip = _bend_legs_to(sk, grot, root, subject=subject, sequence="static")
    return clip


def _bend_legs_to(sk: Skeleton, grot: np.ndarray, root: np.ndarray,
                  left_targets=None, right_targets=None,
                  subject=None, sequence="clip") -> MotionClip:
    """Solve both legs with two-bone IK against ankle targets per frame."""
    n = grot.shape[0]
    l1 = np.linalg.norm(sk.offsets[sk.index("LeftLeg")])
    l2 = np.linalg.norm(sk.offsets[sk.index("LeftFoot")])
    fwd = np.array([0.0, 0.0, 1.0])
    for f in range(n):
        q_hips = grot[f, 0]
        heading_fwd = rot.rotate(q_hips, fwd)
        for side, targets in (("Left", left_targets), ("Right", right_targets)):
            iu, il, ifo = sk.index(f"{side}UpLeg"), sk.index(f"{side}Leg"), sk.index(f"{side}Foot")
            hip_joint = root[f] + rot.rotate(q_hips, sk.offsets[iu])
            if targets is None:
                tgt = hip_joint.copy()
                tgt[1] = STANCE_ANKLE_HEIGHT
            else:
                tgt = targets[f]
            knee, ankle = two_bone_ik(hip_joint, tgt, l1, l2, heading_fwd)
            grot[f, iu] = _look_down(knee - hip_joint, heading_fwd)
            grot[f, il] = _look_down(ankle - knee, heading_fwd)
            grot[f, ifo] = q_hips  # keep the foot level with the pelvis heading
    return _assemble(sk, grot, root, sequence, subject)


def make_walk_clip(n_frames: int = 300, speed: float = 1.0, heading: float = 0.0,
                   stride_period: float = 0.8, subject: int | None = 1,
                   arm_swing: float = 0.5) -> MotionClip:
    """Straight-line walk with genuinely planted feet.

    heading is the yaw in radians (0 walks along +Z, pi/2 along +X).
    Returns a clip whose left/right foot plant schedules follow
    plant_schedule() exactly by construction.
    """
    sk = make_skeleton()
    n = n_frames
    t = np.arange(n) / FPS
    dir3 = np.array([np.sin(heading), 0.0, np.cos(heading)])
    q_yaw = rot.yaw_quat(heading)

    stride = speed * stride_period  # distance per full gait cycle
    grot = np.zeros((n, sk.bone_count, 4))
    grot[..., 0] = 1.0
    grot[:, :] = q_yaw  # whole body faces the heading by default

    root = np.outer(speed * t, dir3)
    root[:, 1] = HIP_HEIGHT - 0.015 * (1.0 - np.cos(4.0 * np.pi * t / stride_period)) / 2.0

    lateral = np.array([np.cos(heading), 0.0, -np.sin(heading)])  # character's left

    def foot_track(phase_offset: float, side_sign: float) -> np.ndarray:
        """Ankle world positions: alternating stance (fixed) and swing."""
        targets = np.empty((n, 3))
        for f in range(n):
            cyc = t[f] / stride_period + phase_offset
            k = np.floor(cyc)
            u = cyc - k
            # plant sits a quarter stride ahead so the hip passes over it
            base = (k - phase_offset) * stride + stride / 4.0
            if u < 0.5:  # stance
                along = base
                h = STANCE_ANKLE_HEIGHT
            else:  # swing: move one stride forward with a smooth lift
                s = (u - 0.5) / 0.5
                ease = s * s * (3 - 2 * s)
                along = base + stride * ease
                h = STANCE_ANKLE_HEIGHT + 0.07 * np.sin(np.pi * s)
            p = dir3 * along + lateral * (side_sign * 0.10)
            p[1] = h
            targets[f] = p
        return targets

    left_t = foot_track(0.0, +1.0)
    right_t = foot_track(0.5, -1.0)

    # arm swing about the lateral axis, counter-phase to the legs
    for f in range(n):
        phase = 2.0 * np.pi * t[f] / stride_period
        for side, sgn in (("Left", -1.0), ("Right", 1.0)):
            swing = rot.from_axis_angle(lateral, sgn * arm_swing * np.sin(phase))
            i = sk.index(f"{side}Arm")
            grot[f, i] = rot.mul(swing, grot[f, i])

    return _bend_legs_to(sk, grot, root, left_t, right_t,
                         subject=subject, sequence=f"walk_{speed:g}")


def plant_schedule(n_frames: int, stride_period: float = 0.8) -> tuple[np.ndarray, np.ndarray]:
    """Ground-truth stance masks (left, right) matching make_walk_clip."""
    t = np.arange(n_frames) / FPS
    left = (t / stride_period) % 1.0 < 0.5
    right = (t / stride_period + 0.5) % 1.0 < 0.5
    return left.astype(float), right.astype(float)


def make_turn_clip(n_frames: int = 60, total_angle: float = 2.0 * np.pi,
                   subject: int | None = 1) -> MotionClip:
    """In-place turn sweeping total_angle over the clip, feet dragged along."""
    sk = make_skeleton()
    n = n_frames
    yaw = total_angle * np.arange(n) / max(n - 1, 1)
    grot = np.zeros((n, sk.bone_count, 4))
    for f in range(n):
        grot[f, :] = rot.yaw_quat(yaw[f])
    root = np.zeros((n, 3))
    root[:, 1] = HIP_HEIGHT
    return _bend_legs_to(sk, grot, root, subject=subject, sequence="turn")
