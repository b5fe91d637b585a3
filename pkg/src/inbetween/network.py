"""Gated mixture-of-experts pose predictor.

A gating network maps the phase window to 8 blend weights on the
7-simplex; the weights convexly combine 8 identically shaped experts
(3 fully-connected layers) into one motion prediction network which maps
the remaining input features to the output vector.  Trained end-to-end
with MSE on normalized features.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, asdict, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .features import Dataset, FeatureLayout

EXPERTS = 8


class DivergenceError(RuntimeError):
    pass


@dataclass
class MoEConfig:
    input_width: int = 588  # motion network input (phase slice excluded)
    output_width: int = 757
    gating_width: int = 130
    experts: int = EXPERTS
    hidden: int = 512
    gating_hidden: int = 128
    dropout: float = 0.3
    lr: float = 1e-4
    batch_size: int = 32
    epochs: int = 150
    warm_restart_period: int = 10
    seed: int = 0


class GatingNetwork(nn.Module):
    """3 FC layers ending in a softmax over expert weights."""

    def __init__(self, in_width: int, hidden: int, experts: int, dropout: float):
        super().__init__()
        self.fc1 = nn.Linear(in_width, hidden)
        self.fc2 = nn.Linear(hidden, hidden)
        self.fc3 = nn.Linear(hidden, experts)
        self.dropout = nn.Dropout(dropout)

    def forward(self, phase: torch.Tensor) -> torch.Tensor:
        h = F.elu(self.fc1(self.dropout(phase)))
        h = F.elu(self.fc2(self.dropout(h)))
        return torch.softmax(self.fc3(h), dim=-1)


class ExpertBank(nn.Module):
    """Per-expert weights and biases for 3 FC layers, blended per sample.

    Blending is affine in the gating weights: both weights and biases are
    convexly combined before the forward pass, so a one-hot gate
    reproduces the selected expert exactly.
    """

    def __init__(self, experts: int, in_width: int, hidden: int, out_width: int,
                 dropout: float):
        super().__init__()
        dims = [(in_width, hidden), (hidden, hidden), (hidden, out_width)]
        self.weights = nn.ParameterList()
        self.biases = nn.ParameterList()
        for d_in, d_out in dims:
            bound = np.sqrt(6.0 / (d_in + d_out))
            self.weights.append(nn.Parameter(
                torch.empty(experts, d_out, d_in).uniform_(-bound, bound)))
            self.biases.append(nn.Parameter(torch.zeros(experts, d_out)))
        self.dropout = nn.Dropout(dropout)

    def blended_layer(self, layer: int, omega: torch.Tensor):
        w = torch.einsum("bk,koi->boi", omega, self.weights[layer])
        b = torch.einsum("bk,ko->bo", omega, self.biases[layer])
        return w, b

    def forward(self, x: torch.Tensor, omega: torch.Tensor) -> torch.Tensor:
        h = x
        for layer in range(3):
            w, b = self.blended_layer(layer, omega)
            h = torch.bmm(w, self.dropout(h)[..., None])[..., 0] + b
            if layer < 2:
                h = F.elu(h)
        return h


class InBetweenNetwork(nn.Module):
    def __init__(self, config: MoEConfig):
        super().__init__()
        self.config = config
        self.gating = GatingNetwork(config.gating_width, config.gating_hidden,
                                    config.experts, config.dropout)
        self.experts = ExpertBank(config.experts, config.input_width,
                                  config.hidden, config.output_width, config.dropout)

    def forward(self, motion: torch.Tensor, phase: torch.Tensor) -> torch.Tensor:
        omega = self.gating(phase)
        return self.experts(motion, omega)


def gate(model: InBetweenNetwork, phase_input: np.ndarray) -> np.ndarray:
    """Expert blend weights for a raw phase window input."""
    model.eval()
    with torch.no_grad():
        x = torch.as_tensor(np.atleast_2d(phase_input), dtype=torch.float32)
        w = model.gating(x).numpy()
    return w[0] if np.ndim(phase_input) == 1 else w


def blend_and_predict(model: InBetweenNetwork, motion: np.ndarray,
                      omega: np.ndarray) -> np.ndarray:
    """Forward pass with explicit gating weights (normalized features)."""
    model.eval()
    with torch.no_grad():
        x = torch.as_tensor(np.atleast_2d(motion), dtype=torch.float32)
        w = torch.as_tensor(np.atleast_2d(omega), dtype=torch.float32)
        y = model.experts(x, w).numpy()
    if not np.all(np.isfinite(y)):
        raise DivergenceError("non-finite network activation")
    return y[0] if np.ndim(motion) == 1 else y


# ---------------------------------------------------------------------------
# Predictor: raw-feature boundary with shape contract and normalization
# ---------------------------------------------------------------------------


@dataclass
class Predictor:
    """Checkpointed model plus its normalization reference."""

    model: InBetweenNetwork
    x_layout: FeatureLayout
    y_layout: FeatureLayout
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.model.eval()

    def _split(self, x_norm: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        ph = self.x_layout.slice("phase")
        mask = np.ones(self.x_layout.width, dtype=bool)
        mask[ph] = False
        return x_norm[..., mask], x_norm[..., ph]

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Raw input vector -> de-normalized output vector."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.x_layout.width:
            raise ValueError(f"input width {x.shape[-1]} != {self.x_layout.width}")
        xn = (x - self.x_mean) / self.x_std
        motion, phase = self._split(xn)
        with torch.no_grad():
            y = self.model(
                torch.as_tensor(np.atleast_2d(motion), dtype=torch.float32),
                torch.as_tensor(np.atleast_2d(phase), dtype=torch.float32),
            ).numpy().astype(np.float64)
        if not np.all(np.isfinite(y)):
            raise DivergenceError("non-finite network output")
        y = y * self.y_std + self.y_mean
        if y.shape[-1] != self.y_layout.width:
            raise ValueError(f"output width {y.shape[-1]} != {self.y_layout.width}")
        return y[0] if x.ndim == 1 else y


def train(dataset: Dataset, config: MoEConfig | None = None,
          validation_fraction: float = 0.05, verbose: bool = False,
          epochs: int | None = None) -> tuple[Predictor, dict]:
    """End-to-end MSE training.  Returns (predictor, history)."""
    phase_slice = dataset.x_layout.slice("phase")
    gating_width = phase_slice.stop - phase_slice.start
    motion_width = dataset.x_layout.width - gating_width
    if config is None:
        config = MoEConfig(input_width=motion_width, output_width=dataset.y_layout.width,
                           gating_width=gating_width)
    if epochs is not None:
        config.epochs = epochs

    torch.manual_seed(config.seed)
    model = InBetweenNetwork(config)
    opt = torch.optim.AdamW(model.parameters(), lr=config.lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingWarmRestarts(
        opt, T_0=max(1, config.warm_restart_period))

    xn = dataset.normalize_x(dataset.x)
    yn = dataset.normalize_y(dataset.y)
    mask = np.ones(dataset.x_layout.width, dtype=bool)
    mask[phase_slice] = False
    motion = torch.as_tensor(xn[:, mask], dtype=torch.float32)
    phase = torch.as_tensor(xn[:, phase_slice], dtype=torch.float32)
    target = torch.as_tensor(yn, dtype=torch.float32)

    n = motion.shape[0]
    n_val = int(n * validation_fraction)
    gen = torch.Generator().manual_seed(config.seed)
    order = torch.randperm(n, generator=gen)
    val_idx, train_idx = order[:n_val], order[n_val:]

    history = {"train_loss": [], "val_loss": []}
    for epoch in range(config.epochs):
        model.train()
        perm = train_idx[torch.randperm(len(train_idx), generator=gen)]
        total = 0.0
        for start in range(0, len(perm), config.batch_size):
            idx = perm[start : start + config.batch_size]
            pred = model(motion[idx], phase[idx])
            loss = torch.mean((pred - target[idx]) ** 2)
            if not torch.isfinite(loss):
                raise DivergenceError(f"non-finite training loss at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.detach()) * len(idx)
        sched.step()
        history["train_loss"].append(total / max(len(perm), 1))
        model.eval()
        if len(val_idx):
            with torch.no_grad():
                vl = float(torch.mean((model(motion[val_idx], phase[val_idx])
                                       - target[val_idx]) ** 2))
        else:
            vl = float("nan")
        history["val_loss"].append(vl)
        if verbose:
            print(f"epoch {epoch}: train {history['train_loss'][-1]:.6f} val {vl:.6f}")

    predictor = Predictor(
        model=model,
        x_layout=dataset.x_layout, y_layout=dataset.y_layout,
        x_mean=dataset.x_mean, x_std=dataset.x_std,
        y_mean=dataset.y_mean, y_std=dataset.y_std,
        meta={"config_hash": hashlib.sha256(
            json.dumps(asdict(config), sort_keys=True).encode()).hexdigest()[:16]},
    )
    return predictor, history


def save_checkpoint(predictor: Predictor, path) -> None:
    torch.save({
        "version": 1,
        "config": asdict(predictor.model.config),
        "state_dict": predictor.model.state_dict(),
        "x_layout": predictor.x_layout.to_json(),
        "y_layout": predictor.y_layout.to_json(),
        "x_mean": predictor.x_mean, "x_std": predictor.x_std,
        "y_mean": predictor.y_mean, "y_std": predictor.y_std,
        "meta": predictor.meta,
    }, path)


def load_checkpoint(path) -> Predictor:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    model = InBetweenNetwork(MoEConfig(**blob["config"]))
    model.load_state_dict(blob["state_dict"])
    return Predictor(
        model=model,
        x_layout=FeatureLayout.from_json(blob["x_layout"]),
        y_layout=FeatureLayout.from_json(blob["y_layout"]),
        x_mean=np.asarray(blob["x_mean"]), x_std=np.asarray(blob["x_std"]),
        y_mean=np.asarray(blob["y_mean"]), y_std=np.asarray(blob["y_std"]),
        meta=blob.get("meta", {}),
    )
