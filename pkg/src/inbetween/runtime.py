"""Autoregressive transition generation.

Each step assembles the input vector from the runtime state, runs the
gated mixture-of-experts predictor, blends the ego- and goal-centric
branches with a smooth-step lambda, integrates the phase window, applies
optional trajectory control and contact-driven foot IK, and feeds the
result back as the next input.  A RuntimeState is single-owner and
strictly sequential; independent transitions can run concurrently against
one shared checkpoint.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import rotations as rot
from .data import MotionClip, Pose, Skeleton
from .features import (
    CONTACT_CHANNELS,
    FULL_WINDOW,
    FUTURE_WINDOW,
    PAST_WINDOW,
    ClipFeatures,
    RootXform,
    decode_pose,
    decode_semi_joint_pose,
    encode_pose,
    encode_target_pose,
)
from .network import Predictor

FPS = 30.0
DT = 1.0 / FPS
HISTORY = 31  # one second of past plus the current frame
PHASE_BLEND_BETA = 0.5  # weight of the predicted next phase state


def smooth_step_lambda(elapsed: float, total: float) -> float:
    """Cubic smoothstep of the transition progress, clamped to [0, 1]."""
    if total <= 0:
        raise ValueError(f"total must be positive, got {total}")
    u = float(np.clip(elapsed / total, 0.0, 1.0))
    return u * u * (3.0 - 2.0 * u)


def _wrap_angle(a):
    return np.arctan2(np.sin(a), np.cos(a))


def _angle_lerp(a, b, t):
    """Interpolate angles along the shortest arc."""
    return a + t * _wrap_angle(b - a)


def _dir_slerp(d0: np.ndarray, d1: np.ndarray, t: float) -> np.ndarray:
    a0 = np.arctan2(d0[..., 0], d0[..., 1])
    a1 = np.arctan2(d1[..., 0], d1[..., 1])
    a = _angle_lerp(a0, a1, t)
    return np.stack([np.sin(a), np.cos(a)], axis=-1)


# ---------------------------------------------------------------------------
# Phase window
# ---------------------------------------------------------------------------


@dataclass
class PhaseWindow:
    """13-sample window of phase states (past 6, current, future 6)."""

    theta: np.ndarray  # (13, C)
    amp: np.ndarray  # (13, C)
    freq: np.ndarray  # (13, C) Hz

    @property
    def manifold(self) -> np.ndarray:
        p = np.stack([self.amp * np.sin(self.theta), self.amp * np.cos(self.theta)], axis=-1)
        return p.reshape(p.shape[0], -1)

    @staticmethod
    def zeros(channels: int) -> "PhaseWindow":
        shape = (FULL_WINDOW.count, channels)
        return PhaseWindow(np.zeros(shape), np.zeros(shape), np.zeros(shape))

    def copy(self) -> "PhaseWindow":
        return PhaseWindow(self.theta.copy(), self.amp.copy(), self.freq.copy())


def integrate_phase(window: PhaseWindow, pred_manifold: np.ndarray,
                    pred_freq: np.ndarray, pred_amp: np.ndarray,
                    dt: float = DT, beta: float = PHASE_BLEND_BETA) -> PhaseWindow:
    """Advance the window one frame.

    Future samples rotate by their own frequency (2*pi*F*dt) and then
    interpolate toward the predicted next phase state with weight beta
    (angles along the shortest arc, amplitudes and frequencies linearly).
    Past samples shift back by one slot.
    """
    n_future = FUTURE_WINDOW.count
    n_past = FULL_WINDOW.count - n_future
    pm = np.asarray(pred_manifold).reshape(n_future, -1, 2)
    pred_theta = np.arctan2(pm[..., 0], pm[..., 1])
    pred_freq = np.asarray(pred_freq).reshape(n_future, -1)
    pred_amp = np.asarray(pred_amp).reshape(n_future, -1)

    out = window.copy()
    out.theta[:n_past] = window.theta[1 : n_past + 1]
    out.amp[:n_past] = window.amp[1 : n_past + 1]
    out.freq[:n_past] = window.freq[1 : n_past + 1]

    theta_rot = window.theta[n_past:] + 2.0 * np.pi * window.freq[n_past:] * dt
    out.theta[n_past:] = _wrap_angle(_angle_lerp(theta_rot, pred_theta, beta))
    out.amp[n_past:] = (1.0 - beta) * window.amp[n_past:] + beta * np.maximum(pred_amp, 0.0)
    out.freq[n_past:] = (1.0 - beta) * window.freq[n_past:] + beta * np.maximum(pred_freq, 0.0)
    return out


# ---------------------------------------------------------------------------
# Trajectory control
# ---------------------------------------------------------------------------


@dataclass
class Traj:
    """A sampled ground-plane trajectory window (world space)."""

    pos: np.ndarray  # (N, 2)
    dir: np.ndarray  # (N, 2) unit
    vel: np.ndarray  # (N, 2)

    def copy(self) -> "Traj":
        return Traj(self.pos.copy(), self.dir.copy(), self.vel.copy())


def apply_trajectory_control(desired: Traj, predicted: Traj, tau: float) -> Traj:
    """Blend the authored future path into the model's prediction:
    positions and velocities linearly, directions spherically, weight tau
    toward the desired trajectory."""
    tau = float(np.clip(tau, 0.0, 1.0))
    if tau == 0.0:
        return predicted.copy()
    return Traj(
        pos=(1 - tau) * predicted.pos + tau * desired.pos,
        dir=_dir_slerp(predicted.dir, desired.dir, tau),
        vel=(1 - tau) * predicted.vel + tau * desired.vel,
    )


# ---------------------------------------------------------------------------
# Foot IK
# ---------------------------------------------------------------------------


@dataclass
class FootLock:
    active: bool = False
    position: np.ndarray = field(default_factory=lambda: np.zeros(3))


_LEG_CHAINS = {
    "left": ("LeftUpLeg", "LeftLeg", "LeftFoot", "LeftToe"),
    "right": ("RightUpLeg", "RightLeg", "RightFoot", "RightToe"),
}
_FOOT_CONTACT_CHANNEL = {"left": 0, "right": 1}


def two_bone_ik(a: np.ndarray, target: np.ndarray, l1: float, l2: float, pole: np.ndarray):
    from .synth import two_bone_ik as _solve  # single analytic implementation

    return _solve(a, target, l1, l2, pole)


def foot_ik(skeleton: Skeleton, positions: np.ndarray, rotations: np.ndarray,
            contacts: np.ndarray, locks: dict[str, FootLock]):
    """Pin feet to their contact-onset lock positions with analytic
    two-bone IK, blended by the contact value.  Mutates nothing; returns
    adjusted (positions, rotations) and updates `locks` in place."""
    positions = positions.copy()
    rotations = rotations.copy()
    for side, chain in _LEG_CHAINS.items():
        try:
            iu, il, ifo, ito = (skeleton.find(name) for name in chain)
        except KeyError:
            continue
        w = float(np.clip(contacts[_FOOT_CONTACT_CHANNEL[side]], 0.0, 1.0))
        lock = locks.setdefault(side, FootLock())
        if w > 0.5 and not lock.active:
            lock.active = True
            lock.position = positions[ifo].copy()
        elif w <= 0.5 and lock.active:
            lock.active = False
        if not lock.active or w <= 0.0:
            continue

        hip, knee, ankle = positions[iu], positions[il], positions[ifo]
        l1 = np.linalg.norm(knee - hip)
        l2 = np.linalg.norm(ankle - knee)
        if l1 < 1e-6 or l2 < 1e-6:
            continue
        target = (1.0 - w) * ankle + w * lock.position
        pole = knee - 0.5 * (hip + ankle)
        if np.linalg.norm(pole) < 1e-6:
            pole = rot.rotate(rotations[iu], rot.FORWARD)
        knee_new, ankle_new = two_bone_ik(hip, target, l1, l2, pole)

        d1 = rot.from_to(knee - hip, knee_new - hip)
        d2 = rot.from_to(ankle - knee, ankle_new - knee_new)
        rotations[iu] = rot.mul(d1, rotations[iu])
        rotations[il] = rot.mul(d2, rotations[il])
        shift = ankle_new - ankle
        positions[il] = knee_new
        positions[ifo] = ankle_new
        positions[ito] = positions[ito] + shift
    return positions, rotations


# ---------------------------------------------------------------------------
# Runtime state and stepping
# ---------------------------------------------------------------------------


@dataclass
class Controls:
    tau: float = 0.0
    desired_path: object = None  # callable elapsed_s -> Traj over the future window
    style: np.ndarray = field(default_factory=lambda: np.zeros(0))
    lambda_override: float | None = None  # ablation: force lambda (e.g. 0.0)
    use_foot_ik: bool = True
    phase_beta: float = PHASE_BLEND_BETA


@dataclass
class RuntimeState:
    skeleton: Skeleton
    positions: np.ndarray  # (B, 3) world
    rotations: np.ndarray  # (B, 4) world
    velocities: np.ndarray  # (B, 3)
    root: RootXform
    traj_past: Traj  # (HISTORY, ...) ring, index -1 = current frame
    contact_past: np.ndarray  # (HISTORY, 5)
    phase_past: np.ndarray  # (HISTORY, 2C) manifold history
    phase_window: PhaseWindow
    future_traj: Traj  # (7, ...) predicted, world space
    target_pose: Pose
    goal: RootXform
    elapsed: float
    total: float
    locks: dict = field(default_factory=dict)
    last_contacts: np.ndarray = field(default_factory=lambda: np.zeros(CONTACT_CHANNELS))

    @property
    def channels(self) -> int:
        return self.phase_window.theta.shape[1]


def state_from_clip(feats: ClipFeatures, frame: int, target_pose: Pose,
                    duration: float) -> RuntimeState:
    """Seed histories from an authored start clip."""
    clip = feats.clip
    frame = int(np.clip(frame, 0, feats.frame_count - 1))
    idx = feats.clamp(np.arange(frame - HISTORY + 1, frame + 1))
    tr = feats.trajectory
    traj_past = Traj(tr.positions[idx].copy(), tr.directions[idx].copy(),
                     tr.velocities[idx].copy())
    fut_idx = feats.clamp(frame + FUTURE_WINDOW.frames(clip.fps))
    future_traj = Traj(tr.positions[fut_idx].copy(), tr.directions[fut_idx].copy(),
                       tr.velocities[fut_idx].copy())
    win_idx = feats.clamp(frame + FULL_WINDOW.frames(clip.fps))
    window = PhaseWindow(
        theta=np.arctan2(
            feats.phase_p[win_idx].reshape(len(win_idx), -1, 2)[..., 0],
            feats.phase_p[win_idx].reshape(len(win_idx), -1, 2)[..., 1],
        ),
        amp=feats.phase_a[win_idx].copy(),
        freq=feats.phase_f[win_idx].copy(),
    )
    return RuntimeState(
        skeleton=clip.skeleton,
        positions=clip.global_positions[frame].copy(),
        rotations=clip.global_rotations[frame].copy(),
        velocities=clip.velocities[frame].copy(),
        root=tr.xform(frame),
        traj_past=traj_past,
        contact_past=feats.contacts[idx].copy(),
        phase_past=feats.phase_p[idx].copy(),
        phase_window=window,
        future_traj=future_traj,
        target_pose=target_pose,
        goal=RootXform(target_pose.root_position.copy(), target_pose.root_facing.copy()),
        elapsed=0.0,
        total=duration,
    )


def state_from_pose(pose: Pose, skeleton: Skeleton, target_pose: Pose,
                    duration: float, channels: int = 5) -> RuntimeState:
    """Cold start from a bare pose: histories repeat the pose at rest."""
    traj_past = Traj(
        np.tile(pose.root_position, (HISTORY, 1)),
        np.tile(pose.root_facing, (HISTORY, 1)),
        np.zeros((HISTORY, 2)),
    )
    future_traj = Traj(
        np.tile(pose.root_position, (FUTURE_WINDOW.count, 1)),
        np.tile(pose.root_facing, (FUTURE_WINDOW.count, 1)),
        np.zeros((FUTURE_WINDOW.count, 2)),
    )
    return RuntimeState(
        skeleton=skeleton,
        positions=pose.positions.copy(),
        rotations=pose.rotations.copy(),
        velocities=np.zeros_like(pose.positions),
        root=RootXform(pose.root_position.copy(), pose.root_facing.copy()),
        traj_past=traj_past,
        contact_past=np.zeros((HISTORY, CONTACT_CHANNELS)),
        phase_past=np.zeros((HISTORY, 2 * channels)),
        phase_window=PhaseWindow.zeros(channels),
        future_traj=future_traj,
        target_pose=target_pose,
        goal=RootXform(target_pose.root_position.copy(), target_pose.root_facing.copy()),
        elapsed=0.0,
        total=duration,
    )


_PAST_SAMPLE_IDX = np.arange(0, HISTORY, 5)  # -30..0 every 5 frames, 7 samples


def assemble_input(state: RuntimeState, controls: Controls) -> np.ndarray:
    """Build the raw input vector from the current runtime state."""
    ego, goal = state.root, state.goal
    remaining = max(state.total - state.elapsed, 0.0)

    # trajectory window: 6 past samples + current + 6 future samples
    past = state.traj_past
    pi = _PAST_SAMPLE_IDX[:-1]  # 6 strictly-past samples
    fut = state.future_traj
    if controls.desired_path is not None and controls.tau > 0.0:
        fut = apply_trajectory_control(controls.desired_path(state.elapsed), fut, controls.tau)
    pos = np.vstack([past.pos[pi], past.pos[-1:], fut.pos[1:]])
    drn = np.vstack([past.dir[pi], past.dir[-1:], fut.dir[1:]])
    vel = np.vstack([past.vel[pi], past.vel[-1:], fut.vel[1:]])
    x_traj = np.concatenate([
        goal.p2_to_local(pos).ravel(),
        goal.d2_to_local(drn).ravel(),
        goal.d2_to_local(vel).ravel(),
    ])
    tdelta = np.maximum(0.0, remaining - FULL_WINDOW.offsets)

    x_pose = encode_pose(state.positions, state.rotations, state.velocities, ego)
    x_target = encode_target_pose(state.target_pose.positions,
                                  state.target_pose.rotations, ego)
    x_contacts = state.contact_past[_PAST_SAMPLE_IDX].ravel()

    phase_past = state.phase_past[_PAST_SAMPLE_IDX[:-1]]
    phase_future = state.phase_window.manifold[FULL_WINDOW.count - FUTURE_WINDOW.count :]
    x_phase = np.concatenate([phase_past.ravel(), phase_future.ravel()])

    x = np.concatenate([x_traj, tdelta, x_pose, x_target, x_contacts, x_phase])
    if controls.style.size:
        x = np.concatenate([x, controls.style])
    return x


def _decode_traj(flat: np.ndarray, xform: RootXform) -> Traj:
    """Inverse of the trajectory block layout: pos | dir | vel, 7 samples."""
    n = FUTURE_WINDOW.count
    pos = flat[: 2 * n].reshape(n, 2)
    drn = flat[2 * n : 4 * n].reshape(n, 2)
    vel = flat[4 * n :].reshape(n, 2)
    norms = np.linalg.norm(drn, axis=-1, keepdims=True)
    drn = np.where(norms > 1e-9, drn / np.maximum(norms, 1e-9), np.array([0.0, 1.0]))
    return Traj(xform.p2_to_world(pos), xform.d2_to_world(drn), xform.d2_to_world(vel))


def blend_bidirectional(ego_pose, goal_pose, lam: float):
    """Blend decoded world-space branches: positions/velocities linearly,
    rotations by slerp.  lam=0 returns the ego branch exactly, lam=1 the
    goal branch."""
    p0, r0, v0 = ego_pose
    p1, r1, v1 = goal_pose
    if lam <= 0.0:
        return p0.copy(), r0.copy(), v0.copy()
    if lam >= 1.0:
        return p1.copy(), r1.copy(), v1.copy()
    return (
        (1 - lam) * p0 + lam * p1,
        rot.slerp(r0, r1, lam),
        (1 - lam) * v0 + lam * v1,
    )


def _blend_traj(ego: Traj, goal: Traj, lam: float) -> Traj:
    if lam <= 0.0:
        return ego.copy()
    if lam >= 1.0:
        return goal.copy()
    return Traj(
        pos=(1 - lam) * ego.pos + lam * goal.pos,
        dir=_dir_slerp(ego.dir, goal.dir, lam),
        vel=(1 - lam) * ego.vel + lam * goal.vel,
    )


def step(state: RuntimeState, predictor: Predictor,
         controls: Controls | None = None) -> tuple[RuntimeState, Pose, dict]:
    """Advance one frame.  Returns (new state, pose, info dict)."""
    if state.elapsed >= state.total - 1e-9:
        raise RuntimeError("transition already complete")
    controls = controls or Controls()
    yl = predictor.y_layout
    n_bones = state.skeleton.bone_count

    x = assemble_input(state, controls)
    y = predictor.predict(x)

    lam = smooth_step_lambda(state.elapsed + DT, state.total)
    if controls.lambda_override is not None:
        lam = float(controls.lambda_override)

    ego, goal = state.root, state.goal
    ego_pose = decode_pose(y[yl.slice("pose")], n_bones, ego)
    goal_pose = decode_semi_joint_pose(y[yl.slice("goal_pose")], n_bones,
                                       state.target_pose.positions, goal)
    positions, rotations, velocities = blend_bidirectional(ego_pose, goal_pose, lam)

    ego_traj = _decode_traj(y[yl.slice("ego_traj")], ego)
    goal_traj = _decode_traj(y[yl.slice("goal_traj")], goal)
    future = _blend_traj(ego_traj, goal_traj, lam)
    if controls.desired_path is not None and controls.tau > 0.0:
        future = apply_trajectory_control(controls.desired_path(state.elapsed + DT),
                                          future, controls.tau)

    contacts = np.clip(y[yl.slice("contacts")], 0.0, 1.0)

    window = integrate_phase(
        state.phase_window,
        y[yl.slice("phase_next")], y[yl.slice("phase_freq")], y[yl.slice("phase_amp")],
        dt=DT, beta=controls.phase_beta,
    )

    new_root = RootXform(future.pos[0].copy(), future.dir[0].copy())

    if controls.use_foot_ik:
        positions, rotations = foot_ik(state.skeleton, positions, rotations,
                                       contacts, state.locks)

    # roll history buffers and append the new current frame
    traj_past = Traj(
        np.vstack([state.traj_past.pos[1:], future.pos[0:1]]),
        np.vstack([state.traj_past.dir[1:], future.dir[0:1]]),
        np.vstack([state.traj_past.vel[1:], future.vel[0:1]]),
    )
    contact_past = np.vstack([state.contact_past[1:], contacts[None]])
    n_past = FULL_WINDOW.count - FUTURE_WINDOW.count
    current_manifold = window.manifold[n_past : n_past + 1]
    phase_past = np.vstack([state.phase_past[1:], current_manifold])

    new_state = replace(
        state,
        positions=positions, rotations=rotations, velocities=velocities,
        root=new_root,
        traj_past=traj_past, contact_past=contact_past, phase_past=phase_past,
        phase_window=window, future_traj=future,
        elapsed=state.elapsed + DT,
        last_contacts=contacts,
    )
    pose = Pose(positions=positions, rotations=rotations, velocities=velocities,
                root_position=new_root.position, root_facing=new_root.facing)
    info = {"lambda": lam, "contacts": contacts,
            "phase": current_manifold[0].copy()}
    return new_state, pose, info


@dataclass
class GeneratedTransition:
    frames: list  # of Pose
    contacts: np.ndarray  # (T, 5)
    lambdas: np.ndarray  # (T,)
    phases: np.ndarray  # (T, 2C)
    end_position_error_cm: float
    end_rotation_error_deg: float
    duration: float
    warnings: list = field(default_factory=list)

    @property
    def frame_count(self) -> int:
        return len(self.frames)


def generate_transition(predictor: Predictor, state: RuntimeState,
                        controls: Controls | None = None,
                        end_error_warn_cm: float = 30.0) -> GeneratedTransition:
    """Run the full autoregressive loop for ceil(30 * duration) frames."""
    if state.total < DT - 1e-9:
        raise ValueError(f"duration {state.total} below one frame")
    controls = controls or Controls()
    n_frames = int(np.ceil(state.total * FPS - 1e-9))
    frames, contacts, lambdas, phases = [], [], [], []
    for _ in range(n_frames):
        state, pose, info = step(state, predictor, controls)
        frames.append(pose)
        contacts.append(info["contacts"])
        lambdas.append(info["lambda"])
        phases.append(info["phase"])

    final = frames[-1]
    tgt = state.target_pose
    pos_err = float(np.mean(np.linalg.norm(final.positions - tgt.positions, axis=-1))) * 100.0
    rot_err = float(np.rad2deg(np.mean(rot.geodesic_angle(final.rotations, tgt.rotations))))
    warnings = []
    if pos_err > end_error_warn_cm:
        warnings.append(f"end-pose position error {pos_err:.1f} cm exceeds "
                        f"{end_error_warn_cm:.1f} cm")
    return GeneratedTransition(
        frames=frames,
        contacts=np.asarray(contacts),
        lambdas=np.asarray(lambdas),
        phases=np.asarray(phases),
        end_position_error_cm=pos_err,
        end_rotation_error_deg=rot_err,
        duration=state.total,
        warnings=warnings,
    )


def transition_to_clip(transition: GeneratedTransition, skeleton: Skeleton,
                       fps: float = FPS) -> MotionClip:
    """Re-express generated world poses as an FK-consistent MotionClip.

    Local rotations come straight from the blended global rotations; bone
    positions are therefore re-derived through the skeleton's offsets.
    """
    n = transition.frame_count
    local = np.empty((n, skeleton.bone_count, 4))
    roots = np.empty((n, 3))
    for f, pose in enumerate(transition.frames):
        g = pose.rotations
        local[f, 0] = g[0]
        for j in range(1, skeleton.bone_count):
            local[f, j] = rot.mul(rot.conjugate(g[skeleton.parents[j]]), g[j])
        roots[f] = pose.positions[0]
    return MotionClip(
        skeleton=skeleton, fps=fps,
        local_rotations=rot.normalize(local),
        root_translations=roots,
        sequence="generated",
    ).finalize()
