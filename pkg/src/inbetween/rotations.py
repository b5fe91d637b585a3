"""Quaternion and rotation helpers shared across the pipeline.

Conventions: quaternions are float arrays [..., 4] ordered (w, x, y, z),
world is Y-up with the character's canonical forward along +Z.  All
functions broadcast over leading dimensions.
"""

from __future__ import annotations

import numpy as np

FORWARD = np.array([0.0, 0.0, 1.0])
UP = np.array([0.0, 1.0, 0.0])

QUAT_IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a*b (apply b first, then a, for column vectors)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def conjugate(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    out = q.copy()
    out[..., 1:] = -out[..., 1:]
    return out


def rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vectors v [..., 3] by quaternions q [..., 4]."""
    q = np.asarray(q, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    qvec = q[..., 1:]
    uv = np.cross(qvec, v)
    uuv = np.cross(qvec, uv)
    return v + 2.0 * (q[..., :1] * uv + uuv)


def from_axis_angle(axis: np.ndarray, angle) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    angle = np.asarray(angle, dtype=np.float64)
    axis = axis / np.linalg.norm(axis, axis=-1, keepdims=True)
    half = angle / 2.0
    s = np.sin(half)
    return np.concatenate(
        [np.cos(half)[..., None], axis * s[..., None]], axis=-1
    )


def from_euler_channel(channel: str, degrees) -> np.ndarray:
    """Rotation quaternion for one BVH euler channel (Xrotation etc.)."""
    axis = {
        "Xrotation": np.array([1.0, 0.0, 0.0]),
        "Yrotation": np.array([0.0, 1.0, 0.0]),
        "Zrotation": np.array([0.0, 0.0, 1.0]),
    }[channel]
    rad = np.deg2rad(np.asarray(degrees, dtype=np.float64))
    shape = rad.shape
    q = from_axis_angle(np.broadcast_to(axis, shape + (3,)), rad)
    return q


def to_matrix(q: np.ndarray) -> np.ndarray:
    q = normalize(q)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def from_matrix(m: np.ndarray) -> np.ndarray:
    """Shepperd's method, branchless over the batch."""
    m = np.asarray(m, dtype=np.float64)
    batch = m.shape[:-2]
    m = m.reshape((-1, 3, 3))
    q = np.empty((m.shape[0], 4), dtype=np.float64)
    t = np.trace(m, axis1=-2, axis2=-1)
    for i in range(m.shape[0]):
        a = m[i]
        if t[i] > 0:
            s = np.sqrt(t[i] + 1.0) * 2
            q[i] = [0.25 * s, (a[2, 1] - a[1, 2]) / s,
                    (a[0, 2] - a[2, 0]) / s, (a[1, 0] - a[0, 1]) / s]
        elif a[0, 0] > a[1, 1] and a[0, 0] > a[2, 2]:
            s = np.sqrt(1.0 + a[0, 0] - a[1, 1] - a[2, 2]) * 2
            q[i] = [(a[2, 1] - a[1, 2]) / s, 0.25 * s,
                    (a[0, 1] + a[1, 0]) / s, (a[0, 2] + a[2, 0]) / s]
        elif a[1, 1] > a[2, 2]:
            s = np.sqrt(1.0 + a[1, 1] - a[0, 0] - a[2, 2]) * 2
            q[i] = [(a[0, 2] - a[2, 0]) / s, (a[0, 1] + a[1, 0]) / s,
                    0.25 * s, (a[1, 2] + a[2, 1]) / s]
        else:
            s = np.sqrt(1.0 + a[2, 2] - a[0, 0] - a[1, 1]) * 2
            q[i] = [(a[1, 0] - a[0, 1]) / s, (a[0, 2] + a[2, 0]) / s,
                    (a[1, 2] + a[2, 1]) / s, 0.25 * s]
    return normalize(q.reshape(batch + (4,)))


def slerp(q0: np.ndarray, q1: np.ndarray, t) -> np.ndarray:
    """Shortest-arc spherical interpolation, broadcast over batch."""
    q0 = normalize(q0)
    q1 = normalize(q1)
    t = np.asarray(t, dtype=np.float64)
    dot = np.sum(q0 * q1, axis=-1)
    q1 = np.where(dot[..., None] < 0, -q1, q1)
    dot = np.abs(dot)
    dot = np.clip(dot, -1.0, 1.0)
    theta = np.arccos(dot)
    sin_theta = np.sin(theta)
    small = sin_theta < 1e-8
    w0 = np.where(small, 1.0 - t, np.sin((1.0 - t) * theta) / np.where(small, 1.0, sin_theta))
    w1 = np.where(small, t, np.sin(t * theta) / np.where(small, 1.0, sin_theta))
    return normalize(w0[..., None] * q0 + w1[..., None] * q1)


def geodesic_angle(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Angle in radians between two rotations, sign-insensitive."""
    a = normalize(a)
    b = normalize(b)
    dot = np.abs(np.sum(a * b, axis=-1))
    return 2.0 * np.arccos(np.clip(dot, -1.0, 1.0))


def hemisphere_align(q: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Flip q where it lies on the opposite hemisphere from reference."""
    dot = np.sum(q * reference, axis=-1, keepdims=True)
    return np.where(dot < 0, -q, q)


def encode_fwd_up(q: np.ndarray) -> np.ndarray:
    """6-float rotation encoding: rotated canonical forward and up axes."""
    q = np.asarray(q, dtype=np.float64)
    fwd = rotate(q, np.broadcast_to(FORWARD, q.shape[:-1] + (3,)))
    up = rotate(q, np.broadcast_to(UP, q.shape[:-1] + (3,)))
    return np.concatenate([fwd, up], axis=-1)


class DegenerateRotationError(ValueError):
    """Raised when a forward/up pair is too close to parallel to decode."""


def decode_fwd_up(six: np.ndarray, check: bool = True) -> np.ndarray:
    """Invert encode_fwd_up via Gram-Schmidt orthonormalization.

    Raises DegenerateRotationError when forward and up are within 1 degree
    of parallel (the frame is then ill-defined).
    """
    six = np.asarray(six, dtype=np.float64)
    fwd = six[..., 0:3]
    up = six[..., 3:6]
    fwd = fwd / np.linalg.norm(fwd, axis=-1, keepdims=True)
    upn = up / np.linalg.norm(up, axis=-1, keepdims=True)
    if check:
        cosang = np.abs(np.sum(fwd * upn, axis=-1))
        if np.any(cosang > np.cos(np.deg2rad(1.0))):
            raise DegenerateRotationError("forward and up vectors are near-parallel")
    up_o = up - np.sum(up * fwd, axis=-1, keepdims=True) * fwd
    up_o = up_o / np.linalg.norm(up_o, axis=-1, keepdims=True)
    right = np.cross(up_o, fwd)
    m = np.stack([right, up_o, fwd], axis=-1)  # columns: x=right, y=up, z=forward
    return from_matrix(m)


def from_to(v1: np.ndarray, v2: np.ndarray) -> np.ndarray:
    """Shortest rotation taking direction v1 to direction v2."""
    v1 = np.asarray(v1, dtype=np.float64)
    v2 = np.asarray(v2, dtype=np.float64)
    a = v1 / np.linalg.norm(v1, axis=-1, keepdims=True)
    b = v2 / np.linalg.norm(v2, axis=-1, keepdims=True)
    w = 1.0 + np.sum(a * b, axis=-1)
    xyz = np.cross(a, b)
    q = np.concatenate([w[..., None], xyz], axis=-1)
    # antiparallel: rotate 180 deg about any perpendicular axis
    bad = w < 1e-8
    if np.any(bad):
        q = np.atleast_2d(q)
        a2 = np.atleast_2d(a)
        for i in np.nonzero(np.atleast_1d(bad).ravel())[0]:
            perp = np.cross(a2[i], [1.0, 0.0, 0.0])
            if np.linalg.norm(perp) < 1e-6:
                perp = np.cross(a2[i], [0.0, 1.0, 0.0])
            q[i] = np.concatenate([[0.0], perp / np.linalg.norm(perp)])
        q = q.reshape(v1.shape[:-1] + (4,)) if v1.ndim > 1 else q[0]
    return normalize(q)


def yaw_quat(angle) -> np.ndarray:
    """Rotation about world up by angle (radians)."""
    return from_axis_angle(np.broadcast_to(UP, np.shape(angle) + (3,)), angle)


def rot2d(angle) -> np.ndarray:
    """2x2 rotation matrix acting on (x, z) ground-plane coordinates."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, s], [-s, c]])
