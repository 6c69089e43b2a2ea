"""Adam and SGD-with-momentum over lists of numpy parameter arrays.

Both steps are pure: they return new parameter arrays and a new state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import ShapeMismatch


@dataclass
class AdamState:
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)
    step: int = 0


@dataclass
class MomentumState:
    velocity: list[np.ndarray] = field(default_factory=list)
    step: int = 0


def _check(params, grads, buffers=None):
    if len(params) != len(grads):
        raise ShapeMismatch(f"{len(params)} params but {len(grads)} grads")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ShapeMismatch(f"param {p.shape} vs grad {g.shape}")
    if buffers:
        for p, b in zip(params, buffers):
            if p.shape != b.shape:
                raise ShapeMismatch(f"param {p.shape} vs state {b.shape}")


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: AdamState | None,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[list[np.ndarray], AdamState]:
    if state is None or not state.m:
        state = AdamState([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)
    _check(params, grads, state.m)
    t = state.step + 1
    m = [beta1 * mi + (1 - beta1) * g for mi, g in zip(state.m, grads)]
    v = [beta2 * vi + (1 - beta2) * g * g for vi, g in zip(state.v, grads)]
    c1, c2 = 1 - beta1**t, 1 - beta2**t
    new = [p - lr * (mi / c1) / (np.sqrt(vi / c2) + eps) for p, mi, vi in zip(params, m, v)]
    return new, AdamState(m, v, t)


def sgd_momentum_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    state: MomentumState | None,
    lr: float = 1e-4,
    momentum: float = 0.9,
) -> tuple[list[np.ndarray], MomentumState]:
    """``v <- momentum * v + g``; ``theta <- theta - lr * v``."""
    if state is None or not state.velocity:
        state = MomentumState([np.zeros_like(p) for p in params], 0)
    _check(params, grads, state.velocity)
    vel = [momentum * v + g for v, g in zip(state.velocity, grads)]
    new = [p - lr * v for p, v in zip(params, vel)]
    return new, MomentumState(vel, state.step + 1)


class Optimizer:
    """Stateful wrapper selecting one of the two update rules by name."""

    def __init__(self, kind: str = "adam", lr: float = 1e-3, momentum: float = 0.9):
        if kind not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {kind!r}")
        self.kind, self.lr, self.momentum = kind, lr, momentum
        self.state = None

    def step(self, params, grads):
        if self.kind == "adam":
            new, self.state = adam_step(params, grads, self.state, lr=self.lr)
        else:
            new, self.state = sgd_momentum_step(
                params, grads, self.state, lr=self.lr, momentum=self.momentum
            )
        return new
