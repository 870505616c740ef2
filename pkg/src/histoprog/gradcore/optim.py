"""SGD with classical momentum, and exponential moving averages of weights."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .tensor import Tensor


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class OptimState:
    lr: float = 1e-3
    momentum: float = 0.9
    velocity: dict = field(default_factory=dict)


def sgd_momentum_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray],
                      state: OptimState) -> OptimState:
    """In-place update ``v <- m*v + g; p <- p - lr*v`` for every parameter.

    Grads are validated before any parameter moves, so a NaN leaves the model intact.
    """
    for name, g in grads.items():
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for parameter {name!r}")
        if g.shape != params[name].shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {params[name].shape} for {name!r}")
    for name, g in grads.items():
        if g is None:
            continue
        v = state.velocity.get(name)
        v = g.copy() if v is None else state.momentum * v + g
        state.velocity[name] = v
        params[name].data = params[name].data - state.lr * v
    return state


def step(params: Mapping[str, Tensor], state: OptimState, max_norm: float | None = None) -> OptimState:
    """Apply one momentum step from the ``.grad`` fields, then clear them.

    With ``max_norm`` the gradients are rescaled so their global L2 norm is at most that value.
    """
    grads = {k: p.grad for k, p in params.items() if p.grad is not None}
    if max_norm is not None:
        norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        if np.isfinite(norm) and norm > max_norm:
            grads = {k: g * (max_norm / norm) for k, g in grads.items()}
    sgd_momentum_step(params, grads, state)
    for p in params.values():
        p.grad = None
    return state


@dataclass
class EmaState:
    """Teacher weights tracked as an EMA of a student."""

    decay: float
    params: dict

    def __post_init__(self):
        if not 0.0 <= self.decay <= 1.0:
            raise ValueError(f"EMA decay must lie in [0, 1], got {self.decay}")

    @classmethod
    def from_params(cls, params: Mapping[str, Tensor], decay: float) -> "EmaState":
        return cls(decay, {k: np.array(p.data, copy=True) for k, p in params.items()})


def ema_update(ema: EmaState, student: Mapping[str, Tensor | np.ndarray]) -> EmaState:
    """teacher <- decay * teacher + (1 - decay) * student, coordinate-wise."""
    d = ema.decay
    new = {}
    for name, t in ema.params.items():
        s = student[name]
        s = s.data if isinstance(s, Tensor) else np.asarray(s, dtype=np.float64)
        if s.shape != t.shape:
            raise ValueError(f"shape mismatch for {name!r}: teacher {t.shape}, student {s.shape}")
        if d == 0.0:
            new[name] = s.copy()
        else:
            # same value as d*t + (1-d)*s, but exact at the fixed point s == t
            new[name] = t + (1.0 - d) * (s - t)
    return EmaState(d, new)
