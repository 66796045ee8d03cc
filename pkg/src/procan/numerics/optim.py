"""Adam with bias correction and per-parameter L2 weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import ConfigurationError, DimensionError
from .tensor import Tensor


@dataclass
class AdamState:
    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[Tensor], **kwargs) -> "AdamState":
        return cls(
            first_moment=[np.zeros_like(p.data) for p in params],
            second_moment=[np.zeros_like(p.data) for p in params],
            **kwargs,
        )


def adam_step(
    params: Sequence[Tensor],
    grads: Sequence[np.ndarray],
    state: AdamState,
    lr: float,
    weight_decay: float | Sequence[float] = 0.0,
) -> None:
    """Update ``params`` in place.

    Weight decay enters as an extra gradient term ``λ·w`` ahead of the
    moment updates (L2 regularisation, not decoupled decay).
    """
    if lr <= 0:
        raise ConfigurationError(f"learning rate must be positive, got {lr}")
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise DimensionError("params, grads and optimizer state must have equal length")
    decays = [weight_decay] * len(params) if np.isscalar(weight_decay) else list(weight_decay)
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v, lam in zip(params, grads, state.first_moment, state.second_moment, decays):
        if g.shape != p.data.shape or m.shape != p.data.shape:
            raise DimensionError(f"gradient shape {g.shape} does not match parameter {p.data.shape}")
        if lam:
            g = g + lam * p.data
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
