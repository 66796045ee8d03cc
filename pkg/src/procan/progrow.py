"""Progressive growing of shape-preserving CAN blocks.

A grown block starts blocked (p = 0), is blended in over the schedule
0.25 → 0.5 → 0.75 → 1 (one step per epoch) and then replaces the features
it was attached to. Three blending rules are supported:

``none``       the new block's output is used as-is (abrupt insertion)
``scalar``     p·θ(f) + (1 - p)·f
``bernoulli``  each spatial position comes wholly from θ(f) or from f,
               chosen by a {0,1} mask drawn with P(1) = p
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from .attention import CanBlock, CanBlockConfig
from .errors import ConfigurationError, DimensionError, StateError
from .numerics import Tensor, as_tensor, where

if TYPE_CHECKING:
    from .network import Network

SCHEDULE = (0.25, 0.5, 0.75, 1.0)
STRATEGIES = ("none", "scalar", "bernoulli")


@dataclass
class GrowthState:
    strategy: str = "bernoulli"
    phase: str = "start"
    p: float = 0.0
    omega: np.ndarray | None = None
    schedule: list[float] = field(default_factory=lambda: list(SCHEDULE))

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigurationError(f"unknown blending strategy {self.strategy!r}; expected one of {STRATEGIES}")

    def to_dict(self) -> dict:
        return {"strategy": self.strategy, "phase": self.phase, "p": self.p, "schedule": list(self.schedule)}


def sample_mask(p: float, h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    """H×W matrix of i.i.d. Bernoulli(p) draws as float 0/1."""
    if not 0.0 <= p <= 1.0:
        raise ConfigurationError(f"mask probability must lie in [0, 1], got {p}")
    return (rng.random((h, w)) < p).astype(np.float64)


def blend(f0_out, theta_out, state: GrowthState) -> Tensor:
    """Combine the incoming features with the new block's output."""
    f0_out, theta_out = as_tensor(f0_out), as_tensor(theta_out)
    if f0_out.shape != theta_out.shape:
        raise DimensionError(f"cannot blend shapes {f0_out.shape} and {theta_out.shape}")
    if state.phase == "final" or state.strategy == "none":
        return theta_out
    if state.phase == "start":
        return f0_out
    if state.strategy == "scalar":
        return theta_out * state.p + f0_out * (1.0 - state.p)
    omega = state.omega
    if omega is None:
        raise StateError("bernoulli blending in transition needs a sampled mask")
    if omega.shape != f0_out.shape[-2:]:
        raise DimensionError(f"mask {omega.shape} does not match feature map {f0_out.shape[-2:]}")
    return where(omega.astype(bool), theta_out, f0_out)


def advance(state: GrowthState, rng: np.random.Generator, spatial: tuple[int, int] | None = None) -> GrowthState:
    """Step to the next p of the schedule; p = 1 enters the final phase and drops the mask."""
    if state.phase == "final":
        raise StateError("cannot advance a block that is already in its final phase")
    if not state.schedule:
        raise StateError("growth schedule is exhausted")
    state.p = float(state.schedule.pop(0))
    if state.p >= 1.0:
        state.phase = "final"
        state.omega = None
        state.schedule = []
        return state
    state.phase = "transition"
    if state.strategy == "bernoulli":
        if spatial is None and state.omega is None:
            raise ConfigurationError("bernoulli advance needs the feature-map size")
        h, w = spatial if spatial is not None else state.omega.shape
        state.omega = sample_mask(state.p, h, w, rng)
    return state


@dataclass
class ExtendedBlock:
    block: CanBlock
    state: GrowthState
    spatial: tuple[int, int]

    def apply(self, h: Tensor, mode: str, mask_rng: np.random.Generator | None) -> Tensor:
        state = self.state
        if state.phase == "start":
            return h
        theta = self.block(h, mode)
        if state.phase == "transition" and state.strategy == "bernoulli" and mode == "train" and mask_rng is not None:
            # fresh mask on every training pass; eval reuses the stored one
            state.omega = sample_mask(state.p, *self.spatial, mask_rng)
        return blend(h, theta, state)


def grow(net: "Network", rng: np.random.Generator | None = None, strategy: str | None = None) -> "Network":
    """Append a freshly initialised shape-preserving block in its start state."""
    spec = net.spec
    if len(net.extended) >= spec.extended_budget:
        raise StateError(f"extended-block budget of {spec.extended_budget} is exhausted")
    c, h, w = net.feature_shape()
    config = CanBlockConfig(c, c, min(spec.extended_c_bar, c), 1, spec.extended_variant)
    block = CanBlock.create(config, rng if rng is not None else net.model_rng)
    state = GrowthState(strategy=strategy or spec.blending)
    net.extended.append(ExtendedBlock(block, state, (h, w)))
    return net
