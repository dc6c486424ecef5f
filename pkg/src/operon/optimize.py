"""Full-batch Adam with bias correction and an optional step-decay schedule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonFiniteGradientError, ShapeError


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def for_params(cls, params: list[np.ndarray], lr: float = 1e-3, **kwargs) -> "AdamState":
        if lr <= 0.0:
            raise ValueError(f"learning rate must be > 0, got {lr}")
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            lr=lr,
            **kwargs,
        )


def adam_step(
    params: list[np.ndarray], grads: list[np.ndarray], state: AdamState
) -> tuple[list[np.ndarray], AdamState]:
    """One Adam update. Parameters are modified in place and returned along
    with the advanced state. NaN/Inf gradients abort the run."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("params, grads and state buffers must align")
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"gradient {i} contains NaN or Inf")
        if g.shape != params[i].shape:
            raise ShapeError(f"gradient {i} shape {g.shape} != param {params[i].shape}")

    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1**state.t
    bias2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.lr * (m / bias1) / (np.sqrt(v / bias2) + state.epsilon)
    return params, state


def step_decay(lr0: float, factor: float, every: int, t: int) -> float:
    """Learning rate after t steps: lr0 / factor**floor(t / every)."""
    if lr0 <= 0.0:
        raise ValueError(f"lr0 must be > 0, got {lr0}")
    if factor <= 1.0:
        raise ValueError(f"decay factor must be > 1, got {factor}")
    if every < 1:
        raise ValueError(f"decay interval must be >= 1, got {every}")
    return lr0 / factor ** (t // every)
