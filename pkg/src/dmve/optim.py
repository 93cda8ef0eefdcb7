"""Adaptive-moment optimizer and gradient clipping."""

from __future__ import annotations

from collections.abc import Mapping, MutableMapping
from dataclasses import dataclass, field

import numpy as np


class NonFiniteError(FloatingPointError):
    """A loss or gradient went NaN/inf; training must stop."""


@dataclass
class OptimizerState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_by_global_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    norm = global_norm(grads)
    if norm <= max_norm:
        return dict(grads)
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}


def adam_step(
    params: MutableMapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: OptimizerState,
) -> None:
    """Apply one Adam update in place (parameters named in ``grads`` only)."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {name!r} at step {state.step + 1}")
        if g.shape != params[name].shape:
            raise ValueError(f"gradient shape {g.shape} != parameter {name!r} shape {params[name].shape}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for name in sorted(grads):
        g = grads[name]
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1.0 - b1) * g if m is None else b1 * m + (1.0 - b1) * g
        v = (1.0 - b2) * g * g if v is None else b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        params[name] = params[name] - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
