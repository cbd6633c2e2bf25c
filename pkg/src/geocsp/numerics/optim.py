"""Training kit: AdamW with decoupled weight decay, exponential moving
average of parameters, global-norm gradient clipping, and the cyclic cosine
learning-rate schedule (15-epoch cycles, peak decayed by 0.9 per cycle,
floor at 0.1 of the cycle peak)."""

from __future__ import annotations

import math

import numpy as np

from ..errors import TrainingAbortError
from .autodiff import Tensor


class AdamW:
    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float = 1e-3,
        weight_decay: float = 1e-3,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.params = dict(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(t.data) for k, t in self.params.items()}
        self.v = {k: np.zeros_like(t.data) for k, t in self.params.items()}

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def step(self, lr: float | None = None) -> None:
        """Apply one update; parameters without gradients decay only."""
        lr = self.lr if lr is None else lr
        self.step_count += 1
        bc1 = 1.0 - self.beta1**self.step_count
        bc2 = 1.0 - self.beta2**self.step_count
        for name, t in self.params.items():
            g = t.grad
            if g is not None and not np.all(np.isfinite(g)):
                raise TrainingAbortError(f"non-finite gradient in {name!r} at step {self.step_count}")
            # Decoupled decay applies to the incoming weights, before the
            # moment update touches them.
            t.data -= lr * self.weight_decay * t.data
            if g is not None:
                m = self.m[name]
                v = self.v[name]
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * (g * g)
                t.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


class Ema:
    """Shadow copy of parameters updated as ``s = decay*s + (1-decay)*p``.

    Shadows never receive gradients; with decay 0 they simply track the
    current parameters.
    """

    def __init__(self, params: dict[str, Tensor], decay: float = 0.99):
        if not 0.0 <= decay < 1.0:
            raise ValueError("EMA decay must lie in [0, 1)")
        self.decay = decay
        self.shadow = {k: t.data.copy() for k, t in params.items()}

    def update(self, params: dict[str, Tensor]) -> None:
        for name, t in params.items():
            s = self.shadow[name]
            s *= self.decay
            s += (1.0 - self.decay) * t.data

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.shadow.items()}


def clip_global_norm(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale all gradients so their joint L2 norm is at most ``max_norm``.

    Gradients below the threshold are untouched.  Returns the pre-clip norm.
    """
    total = 0.0
    for t in params.values():
        if t.grad is not None:
            total += float(np.sum(t.grad * t.grad))
    norm = math.sqrt(total)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for t in params.values():
            if t.grad is not None:
                t.grad *= scale
    return norm


def cosine_cycle_lr(
    epoch: float,
    base_lr: float = 1e-3,
    cycle_epochs: int = 15,
    peak_decay: float = 0.9,
    min_factor: float = 0.1,
) -> float:
    """Learning rate under the cyclic cosine schedule at (fractional) ``epoch``."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    cycle, t = divmod(epoch, cycle_epochs)
    peak = base_lr * peak_decay ** int(cycle)
    floor = min_factor * peak
    return floor + (peak - floor) * (1.0 + math.cos(math.pi * t / cycle_epochs)) / 2.0
