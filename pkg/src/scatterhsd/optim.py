"""Adam and the learning-rate schedules layered on top of it."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Sequence

import numpy as np

from .errors import ShapeError


@dataclass
class AdamState:
    step: int = 0
    m: List[np.ndarray] = field(default_factory=list)
    v: List[np.ndarray] = field(default_factory=list)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
              state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8,
              weight_decay: float = 0.0):
    """One Adam update. Returns ``(new_params, new_state)``; inputs are untouched."""
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} params but {len(grads)} grads")
    if not state.m:
        m_prev = [np.zeros_like(p) for p in params]
        v_prev = [np.zeros_like(p) for p in params]
    else:
        m_prev, v_prev = state.m, state.v
    t = state.step + 1
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, m_prev, v_prev):
        if p.shape != g.shape:
            raise ShapeError(f"param {p.shape} vs grad {g.shape}")
        if weight_decay:
            g = g + weight_decay * p
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        upd = (m / bc1) / (np.sqrt(v / bc2) + eps)
        new_p.append(p - lr * upd)
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(t, new_m, new_v)


class Adam:
    """Adam over a list of parameter tensors (their ``.data`` is replaced)."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
        self.params = list(params)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.state = AdamState()

    def step(self, lr: float):
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data)
                 for p in self.params]
        new, self.state = adam_step([p.data for p in self.params], grads,
                                    self.state, lr, self.beta1, self.beta2,
                                    self.eps, self.weight_decay)
        for p, d in zip(self.params, new):
            p.data = d

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def step_decay_lr(epoch: int, lr_init: float = 1e-3, factor: float = 0.8,
                  every: int = 50) -> float:
    """``lr_init * factor ** floor(epoch / every)``."""
    return lr_init * factor ** (epoch // every)


def cosine_lr(epoch: int, epochs: int, lr_init: float, lr_min: float) -> float:
    """Cosine annealing from ``lr_init`` at epoch 0 to ``lr_min`` at ``epochs``."""
    frac = min(epoch, epochs) / max(epochs, 1)
    return lr_min + 0.5 * (lr_init - lr_min) * (1.0 + math.cos(math.pi * frac))
