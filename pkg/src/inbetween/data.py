"""Skeletal motion capture data: BVH IO, forward kinematics, mirroring,
dataset splitting, and the binary clip cache.

Clips are parsed once and treated as immutable afterwards; every array on
a MotionClip is safe to read from multiple workers.
"""

from __future__ import annotations

import json
import logging
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation as ScipyRotation

from . import rotations as rot

log = logging.getLogger(__name__)

LAFAN1_BONE_COUNT = 22
LAFAN1_FPS = 30.0
BVH_SCALE = 0.01  # centimeters to meters


class BvhParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class MirrorError(ValueError):
    pass


@dataclass(frozen=True)
class Skeleton:
    """Bone hierarchy with rest offsets in meters, topologically sorted."""

    names: tuple[str, ...]
    parents: tuple[int, ...]  # -1 for the root
    offsets: np.ndarray  # (B, 3)

    def __post_init__(self):
        if self.parents[0] != -1:
            raise ValueError("bone 0 must be the root (parent -1)")
        for i, p in enumerate(self.parents[1:], start=1):
            if not 0 <= p < i:
                raise ValueError(f"bone {i} has parent {p}; hierarchy must be topologically sorted")
        object.__setattr__(self, "offsets", np.asarray(self.offsets, dtype=np.float64))

    @property
    def bone_count(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        return self.names.index(name)

    def find(self, *substrings: str) -> int:
        """First bone whose name contains all given substrings."""
        for i, n in enumerate(self.names):
            if all(s.lower() in n.lower() for s in substrings):
                return i
        raise KeyError(f"no bone matching {substrings}")

    def mirror_map(self) -> list[int]:
        """Index permutation swapping Left*/Right* bones.

        Raises MirrorError when any sided bone lacks a counterpart.
        """
        mapping = list(range(self.bone_count))
        lookup = {n: i for i, n in enumerate(self.names)}
        for i, name in enumerate(self.names):
            for a, b in (("Left", "Right"), ("Right", "Left")):
                if a in name:
                    other = name.replace(a, b, 1)
                    if other not in lookup:
                        raise MirrorError(f"bone {name!r} has no {other!r} counterpart")
                    mapping[i] = lookup[other]
                    break
        return mapping

    def bone_lengths(self) -> np.ndarray:
        return np.linalg.norm(self.offsets, axis=-1)


@dataclass(frozen=True)
class Pose:
    """One frame: global bone transforms plus the 2D root transform."""

    positions: np.ndarray  # (B, 3) meters
    rotations: np.ndarray  # (B, 4) unit quaternions, global
    velocities: np.ndarray  # (B, 3) m/s
    root_position: np.ndarray  # (2,) ground-plane (x, z)
    root_facing: np.ndarray  # (2,) unit ground-plane direction


@dataclass
class MotionClip:
    skeleton: Skeleton
    fps: float
    local_rotations: np.ndarray  # (F, B, 4)
    root_translations: np.ndarray  # (F, 3) local translation of bone 0
    subject: int | None = None
    sequence: str = ""
    # derived, filled by finalize()
    global_rotations: np.ndarray = field(default=None, repr=False)
    global_positions: np.ndarray = field(default=None, repr=False)
    velocities: np.ndarray = field(default=None, repr=False)

    @property
    def frame_count(self) -> int:
        return self.local_rotations.shape[0]

    def finalize(self) -> "MotionClip":
        """Run FK and finite-difference velocities; call after construction."""
        self.global_rotations, self.global_positions = forward_kinematics(
            self.skeleton, self.local_rotations, self.root_translations
        )
        self.velocities = finite_difference(self.global_positions, self.fps)
        return self

    def pose(self, i: int) -> Pose:
        i = int(np.clip(i, 0, self.frame_count - 1))
        pos2d, facing = root_transform_of(self, i)
        return Pose(
            positions=self.global_positions[i],
            rotations=self.global_rotations[i],
            velocities=self.velocities[i],
            root_position=pos2d,
            root_facing=facing,
        )


def forward_kinematics(
    skeleton: Skeleton, local_rotations: np.ndarray, root_translations: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Global rotations and positions from local channels, batched over frames."""
    n_frames, n_bones = local_rotations.shape[:2]
    grot = np.empty_like(local_rotations)
    gpos = np.empty((n_frames, n_bones, 3), dtype=np.float64)
    grot[:, 0] = local_rotations[:, 0]
    gpos[:, 0] = root_translations
    for j in range(1, n_bones):
        p = skeleton.parents[j]
        grot[:, j] = rot.mul(grot[:, p], local_rotations[:, j])
        gpos[:, j] = gpos[:, p] + rot.rotate(grot[:, p], skeleton.offsets[j])
    return grot, gpos


def finite_difference(positions: np.ndarray, fps: float) -> np.ndarray:
    """Central differences inside, one-sided at the ends, times frame rate."""
    v = np.empty_like(positions)
    if positions.shape[0] == 1:
        v[:] = 0.0
        return v
    v[1:-1] = (positions[2:] - positions[:-2]) * (fps / 2.0)
    v[0] = (positions[1] - positions[0]) * fps
    v[-1] = (positions[-1] - positions[-2]) * fps
    return v


def yaw_of_quat(q: np.ndarray) -> np.ndarray:
    """Heading angle of the rotated forward axis, atan2(x, z)."""
    f = rot.rotate(q, np.broadcast_to(rot.FORWARD, q.shape[:-1] + (3,)))
    return np.arctan2(f[..., 0], f[..., 2])


def root_transform_of(clip: MotionClip, i: int) -> tuple[np.ndarray, np.ndarray]:
    """Ground-plane root position and facing of frame i (root bone based)."""
    p = clip.global_positions[i, 0]
    yaw = yaw_of_quat(clip.global_rotations[i, 0])
    return np.array([p[0], p[2]]), np.array([np.sin(yaw), np.cos(yaw)])


# ---------------------------------------------------------------------------
# BVH
# ---------------------------------------------------------------------------

_SUBJECT_RE = re.compile(r"subject(\d+)", re.IGNORECASE)


def parse_bvh(path: str | Path, scale: float = BVH_SCALE) -> MotionClip:
    """Parse a BVH file into a finalized MotionClip.

    Lengths are multiplied by `scale` (default converts centimeters to
    meters).  Velocities use central differences inside the clip and
    one-sided differences at both ends.
    """
    path = Path(path)
    lines = path.read_text().splitlines()
    names: list[str] = []
    parents: list[int] = []
    offsets: list[np.ndarray] = []
    channels: list[list[str]] = []

    ln = 0

    def next_tokens():
        nonlocal ln
        while ln < len(lines):
            toks = lines[ln].split()
            ln += 1
            if toks:
                return toks
        raise BvhParseError("unexpected end of file", ln)

    toks = next_tokens()
    if toks[0] != "HIERARCHY":
        raise BvhParseError("expected HIERARCHY", ln)

    stack: list[int] = []
    current = -1
    in_end_site = False
    while True:
        toks = next_tokens()
        kw = toks[0]
        if kw in ("ROOT", "JOINT"):
            names.append(" ".join(toks[1:]) or f"bone{len(names)}")
            parents.append(stack[-1] if stack else -1)
            offsets.append(np.zeros(3))
            channels.append([])
            current = len(names) - 1
        elif kw == "End":
            in_end_site = True
        elif kw == "{":
            stack.append(current if not in_end_site else -2)
        elif kw == "}":
            top = stack.pop()
            if top == -2:
                in_end_site = False
            else:
                current = stack[-1] if stack and stack[-1] >= 0 else current
            if not stack:
                break
        elif kw == "OFFSET":
            if len(toks) != 4:
                raise BvhParseError("OFFSET expects 3 floats", ln)
            if not in_end_site:
                offsets[current] = np.array([float(t) for t in toks[1:4]]) * scale
        elif kw == "CHANNELS":
            n = int(toks[1])
            chs = toks[2 : 2 + n]
            if len(chs) != n:
                raise BvhParseError("channel count mismatch", ln)
            for c in chs:
                if c not in ("Xposition", "Yposition", "Zposition", "Xrotation", "Yrotation", "Zrotation"):
                    raise BvhParseError(f"unknown channel {c!r}", ln)
            channels[current] = chs
        else:
            raise BvhParseError(f"unexpected token {kw!r}", ln)

    toks = next_tokens()
    if toks[0] != "MOTION":
        raise BvhParseError("expected MOTION", ln)
    toks = next_tokens()
    if toks[0] != "Frames:":
        raise BvhParseError("expected 'Frames:'", ln)
    n_frames = int(toks[1])
    toks = next_tokens()
    if toks[0] != "Frame" or toks[1] != "Time:":
        raise BvhParseError("expected 'Frame Time:'", ln)
    fps = 1.0 / float(toks[2])

    total_channels = sum(len(c) for c in channels)
    data = []
    start_ln = ln
    for row in range(n_frames):
        try:
            toks = next_tokens()
        except BvhParseError:
            raise BvhParseError(
                f"header declares {n_frames} frames but data ends after {row}", start_ln
            )
        if len(toks) != total_channels:
            raise BvhParseError(
                f"frame {row}: expected {total_channels} values, got {len(toks)}", ln
            )
        data.append([float(t) for t in toks])
    # trailing rows mean the header undercounts
    while ln < len(lines):
        if lines[ln].split():
            raise BvhParseError(
                f"more MOTION rows than the declared {n_frames} frames", ln + 1
            )
        ln += 1
    values = np.asarray(data, dtype=np.float64)

    n_bones = len(names)
    skeleton = Skeleton(tuple(names), tuple(parents), np.asarray(offsets))
    local_rot = np.zeros((n_frames, n_bones, 4))
    local_rot[..., 0] = 1.0
    root_trans = np.broadcast_to(skeleton.offsets[0], (n_frames, 3)).copy()

    col = 0
    for j in range(n_bones):
        rot_order = ""
        rot_cols = []
        for c in channels[j]:
            if c.endswith("position"):
                axis = "XYZ".index(c[0])
                if j == 0:
                    root_trans[:, axis] = values[:, col] * scale + skeleton.offsets[0][axis]
                else:
                    # non-root translation channels are rare; fold into nothing
                    if np.any(np.abs(values[:, col]) > 1e-8):
                        log.warning("ignoring non-root translation channel on %s", names[j])
            else:
                rot_order += c[0]
                rot_cols.append(col)
            col += 1
        if rot_cols:
            eul = values[:, rot_cols]
            # uppercase = intrinsic: matrix product in channel order
            q = ScipyRotation.from_euler(rot_order, eul, degrees=True).as_quat()
            local_rot[:, j] = np.concatenate([q[:, 3:4], q[:, 0:3]], axis=1)  # xyzw -> wxyz

    m = _SUBJECT_RE.search(path.stem)
    clip = MotionClip(
        skeleton=skeleton,
        fps=fps,
        local_rotations=local_rot,
        root_translations=root_trans,
        subject=int(m.group(1)) if m else None,
        sequence=path.stem,
    ).finalize()
    return clip


def write_bvh(clip: MotionClip, path: str | Path, scale: float = BVH_SCALE) -> None:
    """Write a clip as BVH (ZXY rotation order), inverse of parse_bvh."""
    sk = clip.skeleton
    children: list[list[int]] = [[] for _ in range(sk.bone_count)]
    for j in range(1, sk.bone_count):
        children[sk.parents[j]].append(j)

    out: list[str] = ["HIERARCHY"]

    def emit(j: int, depth: int):
        tag = "ROOT" if j == 0 else "JOINT"
        pad = "  " * depth
        out.append(f"{pad}{tag} {sk.names[j]}")
        out.append(pad + "{")
        off = sk.offsets[j] / scale
        out.append(f"{pad}  OFFSET {off[0]:.6f} {off[1]:.6f} {off[2]:.6f}")
        if j == 0:
            out.append(
                f"{pad}  CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation"
            )
        else:
            out.append(f"{pad}  CHANNELS 3 Zrotation Xrotation Yrotation")
        if children[j]:
            for c in children[j]:
                emit(c, depth + 1)
        else:
            out.append(f"{pad}  End Site")
            out.append(pad + "  {")
            out.append(f"{pad}    OFFSET 0.000000 0.000000 0.000000")
            out.append(pad + "  }")
        out.append(pad + "}")

    emit(0, 0)
    out.append("MOTION")
    out.append(f"Frames: {clip.frame_count}")
    out.append(f"Frame Time: {1.0 / clip.fps:.8f}")

    q = clip.local_rotations
    eulers = np.empty((clip.frame_count, sk.bone_count, 3))
    for j in range(sk.bone_count):
        xyzw = np.concatenate([q[:, j, 1:4], q[:, j, 0:1]], axis=1)
        eulers[:, j] = ScipyRotation.from_quat(xyzw).as_euler("ZXY", degrees=True)

    for f in range(clip.frame_count):
        row = []
        t = (clip.root_translations[f] - sk.offsets[0]) / scale
        row.extend(f"{v:.6f}" for v in t)
        for j in range(sk.bone_count):
            row.extend(f"{v:.6f}" for v in eulers[f, j])
        out.append(" ".join(row))

    Path(path).write_text("\n".join(out) + "\n")


def read_bvh_frame_header(path: str | Path) -> int:
    """The 'Frames:' value, read without running the full parser."""
    for line in Path(path).read_text().splitlines():
        toks = line.split()
        if toks and toks[0] == "Frames:":
            return int(toks[1])
    raise BvhParseError("no 'Frames:' line found")


# ---------------------------------------------------------------------------
# Mirroring
# ---------------------------------------------------------------------------


def _mirror_quat_x(q: np.ndarray) -> np.ndarray:
    """Conjugate a rotation by the x-negating reflection."""
    out = q.copy()
    out[..., 2] *= -1.0  # y
    out[..., 3] *= -1.0  # z
    return out


def mirror_clip(clip: MotionClip) -> MotionClip:
    """Reflect the clip across the vertical plane containing the root's
    initial facing direction, swapping left/right bone channels.

    Involution: mirror_clip(mirror_clip(c)) reproduces c up to rounding.
    """
    sk = clip.skeleton
    mapping = sk.mirror_map()

    p0, facing0 = root_transform_of(clip, 0)
    yaw0 = np.arctan2(facing0[0], facing0[1])
    g = rot.yaw_quat(yaw0)
    g_inv = rot.conjugate(g)
    origin = np.array([p0[0], 0.0, p0[1]])

    grot = clip.global_rotations
    gpos = clip.global_positions

    # into the mirror frame, reflect, back out
    local_p = rot.rotate(g_inv, gpos - origin)
    local_p[..., 0] *= -1.0
    m_pos = rot.rotate(g, local_p) + origin

    local_q = rot.mul(np.broadcast_to(g_inv, grot.shape), grot)
    local_q = _mirror_quat_x(local_q)
    m_rot = rot.mul(np.broadcast_to(g, grot.shape), local_q)

    # swap sided channels
    m_pos = m_pos[:, mapping]
    m_rot = m_rot[:, mapping]

    # rebuild local channels so FK consistency holds by construction
    local_rot = np.empty_like(m_rot)
    local_rot[:, 0] = m_rot[:, 0]
    for j in range(1, sk.bone_count):
        local_rot[:, j] = rot.mul(rot.conjugate(m_rot[:, sk.parents[j]]), m_rot[:, j])
    mirrored = MotionClip(
        skeleton=sk,
        fps=clip.fps,
        local_rotations=rot.normalize(local_rot),
        root_translations=m_pos[:, 0].copy(),
        subject=clip.subject,
        sequence=clip.sequence + "_mirrored" if not clip.sequence.endswith("_mirrored")
        else clip.sequence[: -len("_mirrored")],
    ).finalize()
    return mirrored


# ---------------------------------------------------------------------------
# Dataset split
# ---------------------------------------------------------------------------


def split_dataset(clips: list[MotionClip]) -> tuple[list[MotionClip], list[MotionClip]]:
    """Train/test split by subject: 1-4 train, 5 test."""
    train, test = [], []
    for c in clips:
        if c.subject is None or not 1 <= c.subject <= 5:
            raise ValueError(f"clip {c.sequence!r} has subject {c.subject}, expected 1-5")
        (test if c.subject == 5 else train).append(c)
    if not train:
        log.warning("split produced an empty training set")
    return train, test


# ---------------------------------------------------------------------------
# Binary clip cache: one JSON header line, then little-endian float32 blobs
# ---------------------------------------------------------------------------


def write_array_store(path: str | Path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    header = dict(meta)
    header["endianness"] = "LE"
    header["arrays"] = [{"name": k, "shape": list(v.shape)} for k, v in arrays.items()]
    blob = json.dumps(header).encode() + b"\n"
    with open(path, "wb") as f:
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for v in arrays.values():
            f.write(np.ascontiguousarray(v, dtype="<f4").tobytes())


def read_array_store(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode())
        arrays = {}
        for spec in header["arrays"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = f.read(4 * count)
            arrays[spec["name"]] = np.frombuffer(buf, dtype="<f4").reshape(shape).astype(np.float64)
    return header, arrays


def write_clip_cache(clip: MotionClip, path: str | Path) -> None:
    meta = {
        "kind": "clip",
        "version": 1,
        "fps": clip.fps,
        "frames": clip.frame_count,
        "subject": clip.subject,
        "sequence": clip.sequence,
        "skeleton": {
            "names": list(clip.skeleton.names),
            "parents": list(clip.skeleton.parents),
            "offsets": clip.skeleton.offsets.tolist(),
        },
    }
    arrays = {
        "local_rotations": clip.local_rotations,
        "root_translations": clip.root_translations,
    }
    write_array_store(path, meta, arrays)


def read_clip_cache(path: str | Path) -> MotionClip:
    meta, arrays = read_array_store(path)
    sk = meta["skeleton"]
    skeleton = Skeleton(tuple(sk["names"]), tuple(sk["parents"]), np.asarray(sk["offsets"]))
    clip = MotionClip(
        skeleton=skeleton,
        fps=meta["fps"],
        local_rotations=rot.normalize(arrays["local_rotations"]),
        root_translations=arrays["root_translations"],
        subject=meta.get("subject"),
        sequence=meta.get("sequence", ""),
    ).finalize()
    return clip


def load_clips(data_dir: str | Path, scale: float = BVH_SCALE) -> list[MotionClip]:
    """Parse every .bvh under data_dir (also reads .clip caches)."""
    data_dir = Path(data_dir)
    clips = []
    for p in sorted(data_dir.glob("*.clip")):
        clips.append(read_clip_cache(p))
    for p in sorted(data_dir.glob("*.bvh")):
        clips.append(parse_bvh(p, scale=scale))
    return clips
