"""Adam with decoupled weight decay, and plateau-based learning-rate decay."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BETA1 = 0.9
BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState,
              lr: float, weight_decay: float = 0.0) -> None:
    """One in-place update: theta -= lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * theta)."""
    state.t += 1
    t = state.t
    c1 = 1.0 - BETA1 ** t
    c2 = 1.0 - BETA2 ** t
    for name, theta in params.items():
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(theta)
            state.v[name] = np.zeros_like(theta)
        v = state.v[name]
        m *= BETA1
        m += (1.0 - BETA1) * g
        v *= BETA2
        v += (1.0 - BETA2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + ADAM_EPS)
        if weight_decay:
            update = update + weight_decay * theta
        theta -= lr * update


class PlateauScheduler:
    """Multiply the learning rate by `factor` after `patience` epochs without improvement.

    An epoch improves when its validation loss beats the best so far by more
    than `min_delta`. The stale-epoch counter restarts after every reduction.
    """

    def __init__(self, lr: float, factor: float = 0.9, patience: int = 5, min_delta: float = 1e-6):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.min_delta = min_delta
        self.best = float("inf")
        self.stale = 0

    def step(self, val_loss: float) -> float:
        if val_loss < self.best - self.min_delta:
            self.best = val_loss
            self.stale = 0
        else:
            self.stale += 1
            if self.stale >= self.patience:
                self.lr *= self.factor
                self.stale = 0
        return self.lr
