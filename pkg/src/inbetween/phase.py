"""Phase manifold learning.

A convolutional autoencoder whose latent channels are constrained to be
sinusoids: each latent curve is parameterized by (frequency, amplitude,
bias) through a differentiable FFT and by a phase angle through a learned
2D projection + atan2.  The per-frame manifold vector is
P = A * (sin(theta), cos(theta)) per channel.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from . import rotations as rot
from .data import MotionClip, write_array_store, read_array_store
from .features import RootTrajectory, compute_root_trajectory

WINDOW_FRAMES = 61  # 2 s at 30 fps, centered, inclusive
DEFAULT_CHANNELS = 5


class DivergenceError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Frequency-domain parameterization
# ---------------------------------------------------------------------------


def fft_parameterize(curve: np.ndarray, fps: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(F, A, B) of curves along the last axis.

    B is the mean, A = 2*sqrt(sum of positive-bin power)/N, and F is the
    power-weighted mean of the positive frequency bins (0 for constants).
    """
    curve = np.asarray(curve, dtype=np.float64)
    n = curve.shape[-1]
    spec = np.fft.rfft(curve, axis=-1)
    bias = spec[..., 0].real / n
    power = np.abs(spec[..., 1:]) ** 2
    freqs = np.fft.rfftfreq(n, d=1.0 / fps)[1:]
    total = power.sum(axis=-1)
    amp = 2.0 * np.sqrt(total) / n
    # near-constant curves carry only rounding noise in the positive bins;
    # report zero frequency rather than the noise centroid
    tiny = amp <= 1e-9 * (1.0 + np.abs(bias))
    freq = np.where(tiny, 0.0, (power * freqs).sum(axis=-1) / np.maximum(total, 1e-30))
    return freq, amp, bias


def _fft_parameterize_torch(curve: torch.Tensor, fps: float):
    n = curve.shape[-1]
    spec = torch.fft.rfft(curve, dim=-1)
    bias = spec[..., 0].real / n
    power = torch.abs(spec[..., 1:]) ** 2
    freqs = torch.fft.rfftfreq(n, d=1.0 / fps).to(curve.device)[1:]
    total = power.sum(dim=-1)
    amp = 2.0 * torch.sqrt(total + 1e-12) / n
    freq = (power * freqs).sum(dim=-1) / (total + 1e-12)
    return freq, amp, bias


def compute_manifold(amplitude: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """P = A*(sin theta, cos theta), flattened per channel: (..., 2C)."""
    a = np.asarray(amplitude, dtype=np.float64)
    t = np.asarray(theta, dtype=np.float64)
    p = np.stack([a * np.sin(t), a * np.cos(t)], axis=-1)
    return p.reshape(p.shape[:-2] + (-1,))


def manifold_amplitude(p: np.ndarray) -> np.ndarray:
    """Per-channel 2-norm of the manifold vector (recovers A)."""
    v = np.asarray(p)
    v = v.reshape(v.shape[:-1] + (-1, 2))
    return np.linalg.norm(v, axis=-1)


def manifold_theta(p: np.ndarray) -> np.ndarray:
    v = np.asarray(p)
    v = v.reshape(v.shape[:-1] + (-1, 2))
    return np.arctan2(v[..., 0], v[..., 1])


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------


@dataclass
class PAEConfig:
    input_channels: int = 66  # J*3
    channels: int = DEFAULT_CHANNELS
    window: int = WINDOW_FRAMES
    fps: float = 30.0
    kernel_wide: int = 31
    kernel_narrow: int = 3
    lr: float = 1e-3
    batch_size: int = 64


class PeriodicAutoencoder(nn.Module):
    def __init__(self, config: PAEConfig):
        super().__init__()
        self.config = config
        c, j3, n = config.channels, config.input_channels, config.window
        kw, kn = config.kernel_wide, config.kernel_narrow
        self.enc1 = nn.Conv1d(j3, j3, kw, padding=kw // 2)
        self.enc2 = nn.Conv1d(j3, c, kn, padding=kn // 2)
        # learned 2D projection of each latent curve for the phase angle
        self.phase_proj = nn.Parameter(torch.randn(c, n, 2) * (1.0 / np.sqrt(n)))
        self.dec1 = nn.Conv1d(c, j3, kn, padding=kn // 2)
        self.dec2 = nn.Conv1d(j3, j3, kw, padding=kw // 2)
        t = torch.linspace(-(n - 1) / 2, (n - 1) / 2, n) / config.fps
        self.register_buffer("timeline", t)

    def encode(self, x: torch.Tensor):
        """x: (B, J3, N) -> latent curves (B, C, N) and (F, A, Bias, Theta)."""
        latent = self.enc2(torch.tanh(self.enc1(x)))
        freq, amp, bias = _fft_parameterize_torch(latent, self.config.fps)
        proj = torch.einsum("bcn,cnd->bcd", latent, self.phase_proj)
        theta = torch.atan2(proj[..., 0], proj[..., 1])
        return latent, freq, amp, bias, theta

    def reconstruct_latent(self, freq, amp, bias, theta):
        """Constrained sinusoidal latent: A*sin(2*pi*F*t + theta) + B."""
        arg = 2.0 * np.pi * freq[..., None] * self.timeline + theta[..., None]
        return amp[..., None] * torch.sin(arg) + bias[..., None]

    def decode(self, latent: torch.Tensor) -> torch.Tensor:
        return self.dec2(torch.tanh(self.dec1(latent)))

    def forward(self, x: torch.Tensor):
        latent, freq, amp, bias, theta = self.encode(x)
        sinus = self.reconstruct_latent(freq, amp, bias, theta)
        recon = self.decode(sinus)
        return recon, (freq, amp, bias, theta, sinus)


def train_pae(windows: np.ndarray, epochs: int, config: PAEConfig | None = None,
              seed: int = 0, verbose: bool = False):
    """Minimize window reconstruction error.  Returns (model, epoch losses)."""
    if windows.size == 0:
        raise ValueError("empty window dataset")
    config = config or PAEConfig(input_channels=windows.shape[1], window=windows.shape[2])
    torch.manual_seed(seed)
    model = PeriodicAutoencoder(config)
    opt = torch.optim.AdamW(model.parameters(), lr=config.lr)
    data = torch.as_tensor(windows, dtype=torch.float32)
    n = data.shape[0]
    losses = []
    gen = torch.Generator().manual_seed(seed)
    for epoch in range(epochs):
        perm = torch.randperm(n, generator=gen)
        total = 0.0
        for start in range(0, n, config.batch_size):
            batch = data[perm[start : start + config.batch_size]]
            recon, _ = model(batch)
            loss = torch.mean((recon - batch) ** 2)
            if not torch.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach()) * batch.shape[0]
        losses.append(total / n)
        if verbose:
            print(f"pae epoch {epoch}: loss {losses[-1]:.6f}")
    return model, losses


def pae_encode(model: PeriodicAutoencoder, window: np.ndarray):
    """Latent curves and window-center phase params for one window."""
    cfg = model.config
    if window.shape != (cfg.input_channels, cfg.window):
        raise ValueError(
            f"window shape {window.shape} != ({cfg.input_channels}, {cfg.window})"
        )
    with torch.no_grad():
        x = torch.as_tensor(window[None], dtype=torch.float32)
        latent, freq, amp, bias, theta = model.encode(x)
    return (
        latent[0].numpy(),
        {
            "freq": freq[0].numpy(),
            "amp": amp[0].numpy(),
            "bias": bias[0].numpy(),
            "theta": theta[0].numpy(),
        },
    )


# ---------------------------------------------------------------------------
# Velocity windows and per-clip export
# ---------------------------------------------------------------------------


def root_relative_velocities(clip: MotionClip, trajectory: RootTrajectory | None = None) -> np.ndarray:
    """(F, J*3) joint velocities expressed in the per-frame root frame."""
    trajectory = trajectory or compute_root_trajectory(clip)
    out = np.empty((clip.frame_count, clip.skeleton.bone_count * 3))
    for f in range(clip.frame_count):
        xf = trajectory.xform(f)
        out[f] = xf.dir_to_local(clip.velocities[f]).ravel()
    return out


def velocity_windows(clip: MotionClip, stride: int = 1, window: int = WINDOW_FRAMES) -> np.ndarray:
    """(num, J*3, window) boundary-clamped windows centered on sampled frames."""
    vel = root_relative_velocities(clip)
    half = window // 2
    centers = np.arange(0, clip.frame_count, stride)
    idx = np.clip(centers[:, None] + np.arange(-half, half + 1)[None, :], 0, clip.frame_count - 1)
    return vel[idx].transpose(0, 2, 1)


@dataclass
class PhaseSeries:
    """Per-frame phase parameters for one clip."""

    amplitude: np.ndarray  # (F, C)
    frequency: np.ndarray  # (F, C) Hz
    bias: np.ndarray  # (F, C)
    theta: np.ndarray  # (F, C) in (-pi, pi]
    manifold: np.ndarray  # (F, 2C)

    @property
    def frame_count(self) -> int:
        return self.amplitude.shape[0]


def export_phase_series(model: PeriodicAutoencoder, clip: MotionClip,
                        batch_size: int = 256) -> PhaseSeries:
    """Window-center phase params for every frame, sign-corrected so the
    median phase velocity is non-negative per channel."""
    windows = velocity_windows(clip, stride=1, window=model.config.window)
    amps, freqs, biases, thetas = [], [], [], []
    with torch.no_grad():
        for start in range(0, windows.shape[0], batch_size):
            x = torch.as_tensor(windows[start : start + batch_size], dtype=torch.float32)
            _, freq, amp, bias, theta = model.encode(x)
            amps.append(amp.numpy())
            freqs.append(freq.numpy())
            biases.append(bias.numpy())
            thetas.append(theta.numpy())
    amp = np.concatenate(amps).astype(np.float64)
    freq = np.concatenate(freqs).astype(np.float64)
    bias = np.concatenate(biases).astype(np.float64)
    theta = np.concatenate(thetas).astype(np.float64)

    # enforce forward-playing phase: flip channels that run backwards
    if theta.shape[0] > 1:
        dtheta = np.diff(np.unwrap(theta, axis=0), axis=0)
        flip = np.median(dtheta, axis=0) < 0
        theta[:, flip] *= -1.0
    theta = np.arctan2(np.sin(theta), np.cos(theta))

    return PhaseSeries(
        amplitude=amp, frequency=freq, bias=bias, theta=theta,
        manifold=compute_manifold(amp, theta),
    )


def save_phase_series(series: PhaseSeries, path: str | Path) -> None:
    write_array_store(path, {"kind": "phase", "version": 1,
                             "channels": series.amplitude.shape[1]}, {
        "amplitude": series.amplitude,
        "frequency": series.frequency,
        "bias": series.bias,
        "theta": series.theta,
        "manifold": series.manifold,
    })


def load_phase_series(path: str | Path) -> PhaseSeries:
    _, arrays = read_array_store(path)
    return PhaseSeries(
        amplitude=arrays["amplitude"], frequency=arrays["frequency"],
        bias=arrays["bias"], theta=arrays["theta"], manifold=arrays["manifold"],
    )


def save_pae(model: PeriodicAutoencoder, path: str | Path) -> None:
    torch.save({"version": 1, "config": asdict(model.config),
                "state_dict": model.state_dict()}, path)
    Path(str(path) + ".json").write_text(
        json.dumps({"version": 1, "config": asdict(model.config)}, indent=2)
    )


def load_pae(path: str | Path) -> PeriodicAutoencoder:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    model = PeriodicAutoencoder(PAEConfig(**blob["config"]))
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model
