"""Channel Attentive Non-Local (CAN) blocks and their ablation variants.

A block reshapes its (B, C_in, H, W) input to X ∈ R^{C_in×N}, builds a
spatial attention map over the N positions, optionally gates the attended
features per channel, adds the residual X and finishes with a 3×3
convolution, batch norm and relu.

The spatial map is stored output-major: ``attn[j, i]`` is the weight of
source position ``i`` for output position ``j``, so every row sums to one.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DimensionError
from .numerics import (
    BatchNormState,
    Tensor,
    as_tensor,
    batchnorm2d,
    conv2d,
    parameter,
    relu,
    sigmoid,
    softmax_rows,
    where,
)

VARIANTS = ("CAN", "NonLocal", "NonLocalSE", "DualAttention")
SE_RATIO = 4
# |logit| beyond this rounds the gate to exactly 0 or 1 in float64 near 37; clamping
# keeps it strictly inside (0, 1) at a value cost below 1e-13
GATE_LOGIT_LIMIT = 30.0


@dataclass(frozen=True)
class CanBlockConfig:
    c_in: int
    c_out: int
    c_bar: int = 1
    stride: int = 1
    variant: str = "CAN"

    def __post_init__(self):
        if self.c_in < 1 or self.c_out < 1:
            raise ConfigurationError(f"channel counts must be positive, got {self.c_in}, {self.c_out}")
        if not 1 <= self.c_bar <= self.c_in:
            raise ConfigurationError(f"c_bar must lie in [1, c_in={self.c_in}], got {self.c_bar}")
        if self.stride not in (1, 2):
            raise ConfigurationError(f"stride must be 1 or 2, got {self.stride}")
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")

    @property
    def se_hidden(self) -> int:
        return max(1, self.c_in // SE_RATIO)


@dataclass
class CanBlockParams:
    """Learnable tensors of one block. ``me`` exists for CAN only, ``se_*`` for NonLocalSE."""

    Mq: Tensor
    Mk: Tensor
    Mv: Tensor
    Mo: Tensor
    bn: BatchNormState
    me: Tensor | None = None
    se_w1: Tensor | None = None
    se_b1: Tensor | None = None
    se_w2: Tensor | None = None
    se_b2: Tensor | None = None

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        names = ["Mq", "Mk", "Mv", "me", "se_w1", "se_b1", "se_w2", "se_b2", "Mo"]
        out = [(n, getattr(self, n)) for n in names if getattr(self, n) is not None]
        out += [("bn.scale", self.bn.scale), ("bn.shift", self.bn.shift)]
        return out

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.named_tensors()]


def kaiming_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(config: CanBlockConfig, rng: np.random.Generator) -> CanBlockParams:
    """Kaiming-uniform projections and conv, zero channel-gate vector, identity norm."""
    c_in, c_out, c_bar = config.c_in, config.c_out, config.c_bar
    params = CanBlockParams(
        Mq=parameter(kaiming_uniform(rng, (c_bar, c_in), c_in), "Mq"),
        Mk=parameter(kaiming_uniform(rng, (c_bar, c_in), c_in), "Mk"),
        Mv=parameter(kaiming_uniform(rng, (c_in, c_in), c_in), "Mv"),
        Mo=parameter(kaiming_uniform(rng, (c_out, c_in, 3, 3), c_in * 9), "Mo"),
        bn=BatchNormState.create(c_out),
    )
    if config.variant == "CAN":
        params.me = parameter(np.zeros(c_in), "me")
    elif config.variant == "NonLocalSE":
        r = config.se_hidden
        params.se_w1 = parameter(kaiming_uniform(rng, (r, c_in), c_in), "se_w1")
        params.se_b1 = parameter(np.zeros(r), "se_b1")
        params.se_w2 = parameter(kaiming_uniform(rng, (c_in, r), r), "se_w2")
        params.se_b2 = parameter(np.zeros(c_in), "se_b2")
    return params


def _as_batch(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 2:
        return x.reshape(1, *x.shape), True
    if x.ndim != 3:
        raise DimensionError(f"expected (C, N) or (B, C, N), got {x.shape}")
    return x, False


def spatial_attention(x, params: CanBlockParams) -> Tensor:
    """Row-stochastic (B, N, N) map; entry [j, i] weights source i for output j."""
    X, single = _as_batch(as_tensor(x))
    if X.shape[1] != params.Mq.shape[1]:
        raise DimensionError(f"input has {X.shape[1]} channels, projections expect {params.Mq.shape[1]}")
    Q = params.Mq @ X
    K = params.Mk @ X
    # S[i, j] = q_i · k_j, normalised over the source index i
    attn = softmax_rows(K.mT @ Q)
    return attn.reshape(attn.shape[1:]) if single else attn


def nonlocal_core(x, params: CanBlockParams, canonical: bool = False) -> Tensor:
    """Spatially attended features A = V·Bᵀ for X of shape (C, N) or (B, C, N).

    With ``canonical=True`` every reduction over the source-position axis
    sums its terms in sorted order, which makes the result independent of
    how positions are numbered: permuting the columns of X permutes the
    output columns bit for bit. That path is for verification and carries
    no gradient.
    """
    x = as_tensor(x)
    if canonical:
        return Tensor(_nonlocal_core_canonical(x.data, params))
    X, single = _as_batch(x)
    attn = spatial_attention(X, params)
    A = (params.Mv @ X) @ attn.mT
    return A.reshape(A.shape[1:]) if single else A


def _project_ordered(m: np.ndarray, X: np.ndarray) -> np.ndarray:
    """m @ X for (K, C) by (B, C, N), accumulating channels in a fixed order per column."""
    acc = m[None, :, 0, None] * X[:, None, 0, :]
    for c in range(1, m.shape[1]):
        acc = acc + m[None, :, c, None] * X[:, None, c, :]
    return acc


def _nonlocal_core_canonical(x: np.ndarray, params: CanBlockParams) -> np.ndarray:
    single = x.ndim == 2
    X = x[None] if single else x
    Q = _project_ordered(params.Mq.data, X)
    K = _project_ordered(params.Mk.data, X)
    V = _project_ordered(params.Mv.data, X)
    St = K[:, 0, :, None] * Q[:, 0, None, :]
    for z in range(1, Q.shape[1]):
        St = St + K[:, z, :, None] * Q[:, z, None, :]
    e = np.exp(St - St.max(axis=-1, keepdims=True))
    attn = e / np.sort(e, axis=-1).sum(axis=-1, keepdims=True)
    terms = V[:, :, None, :] * attn[:, None, :, :]  # (B, C, j, i)
    A = np.sort(terms, axis=-1).sum(axis=-1)
    return A[0] if single else A


def channel_gate(x, me) -> Tensor:
    """g_c = sigmoid(Σ_j X_cj e_j) with e_j = Σ_c me_c X_cj; X is (C, N) or (B, C, N).

    Returns (C,) or (B, C).
    """
    X, single = _as_batch(as_tensor(x))
    me = as_tensor(me)
    if me.shape != (X.shape[1],):
        raise DimensionError(f"gate vector {me.shape} does not match {X.shape[1]} channels")
    e = me.reshape(1, -1) @ X  # (B, 1, N)
    logit = X @ e.mT  # (B, C, 1)
    over = np.abs(logit.data) > GATE_LOGIT_LIMIT
    if over.any():
        logit = where(over, np.clip(logit.data, -GATE_LOGIT_LIMIT, GATE_LOGIT_LIMIT), logit)
    g = sigmoid(logit)
    g = g.reshape(g.shape[0], g.shape[1])
    return g.reshape(g.shape[1]) if single else g


def se_gate(features: Tensor, params: CanBlockParams) -> Tensor:
    """Squeeze-and-excitation gate of (B, C, N) features → (B, C)."""
    pooled = features.mean(axis=2)
    hidden = relu(pooled @ params.se_w1.mT + params.se_b1)
    return sigmoid(hidden @ params.se_w2.mT + params.se_b2)


def pre_conv(x, params: CanBlockParams, variant: str = "CAN", gate_override=None, trace: dict | None = None) -> Tensor:
    """Ψ for a (B, C, N) input: attention output plus residual, before the 3×3 conv.

    ``gate_override`` replaces the CAN channel gate (shape (B, C) or broadcastable).
    """
    X, single = _as_batch(as_tensor(x))
    if variant not in VARIANTS:
        raise ConfigurationError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    attn = spatial_attention(X, params)
    V = params.Mv @ X
    A = V @ attn.mT
    if trace is not None:
        trace.update(attn=attn.data, V=V.data, A=A.data)
    if variant == "CAN":
        if gate_override is not None:
            g = as_tensor(gate_override)
        else:
            if params.me is None:
                raise ConfigurationError("CAN variant needs the gate vector me")
            g = channel_gate(X, params.me)
        if trace is not None:
            trace["g"] = g.data
        psi = A * g.reshape(*g.shape, 1) + X
    elif variant == "NonLocal":
        psi = A + X
    elif variant == "NonLocalSE":
        if params.se_w1 is None:
            raise ConfigurationError("NonLocalSE variant needs its squeeze-excitation weights")
        g = se_gate(A, params)
        if trace is not None:
            trace["g"] = g.data
        psi = A * g.reshape(*g.shape, 1) + X
    else:
        # channel branch of dual attention: C×C map from the negated Gram matrix
        energy = X @ X.mT
        cattn = softmax_rows(-energy)
        if trace is not None:
            trace["channel_attn"] = cattn.data
        psi = (A + X) + (cattn @ X + X)
    return psi.reshape(psi.shape[1:]) if single else psi


def can_forward(x, params: CanBlockParams, config: CanBlockConfig, mode: str = "train", trace: dict | None = None) -> Tensor:
    """Full block: (B, C_in, H, W) → (B, C_out, H', W')."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise DimensionError(f"block input must be (B, C, H, W), got {x.shape}")
    b, c, h, w = x.shape
    if c != config.c_in:
        raise DimensionError(f"block expects {config.c_in} channels, got {c}")
    psi = pre_conv(x.reshape(b, c, h * w), params, config.variant, trace=trace)
    if trace is not None:
        trace["psi"] = psi.data
    y = conv2d(psi.reshape(b, c, h, w), params.Mo, stride=config.stride, padding=1)
    y = batchnorm2d(y, params.bn, mode)
    return relu(y)


def variant_forward(x, params: CanBlockParams, variant: str, mode: str = "train", stride: int = 1) -> Tensor:
    if variant not in VARIANTS:
        raise ConfigurationError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    c_in = params.Mv.shape[0]
    config = CanBlockConfig(c_in, params.Mo.shape[0], params.Mq.shape[0], stride, variant)
    return can_forward(x, params, config, mode)


@dataclass(frozen=True)
class AttentionShapeSummary:
    spatial_attention_shape: tuple[int, int] | None
    channel_attention_shape: tuple[int, int] | None
    matrix_multiply_count: int
    parameter_count: int
    mechanism: str = ""


def parameter_count(config: CanBlockConfig) -> int:
    """Closed-form count of learnable scalars (norm scale/shift included)."""
    c_in, c_out, c_bar = config.c_in, config.c_out, config.c_bar
    count = 2 * c_bar * c_in + c_in * c_in + 9 * c_out * c_in + 2 * c_out
    if config.variant == "CAN":
        count += c_in
    elif config.variant == "NonLocalSE":
        r = config.se_hidden
        count += 2 * r * c_in + r + c_in
    return count


def shape_summary(config: CanBlockConfig, n: int) -> AttentionShapeSummary:
    """Attention-map shapes for ``n`` spatial positions and the block's parameter count.

    ``matrix_multiply_count`` counts products inside the attention mechanism
    (the 1×1 projections are excluded): S and A for the spatial map, plus
    e and g for the CAN gate or XXᵀ and ΦX for the dual channel branch.
    """
    c = config.c_in
    table = {
        "CAN": ((c, 1), 4, "two dependent MM"),
        "NonLocal": (None, 2, "MM"),
        "NonLocalSE": ((c, 1), 2, "MM + GAP with FC"),
        "DualAttention": ((c, c), 4, "two independent MM"),
    }
    channel, mm, mechanism = table[config.variant]
    return AttentionShapeSummary((n, n), channel, mm, parameter_count(config), mechanism)


@dataclass
class CanBlock:
    """A configured block with its parameters."""

    config: CanBlockConfig
    params: CanBlockParams = field(repr=False)

    @classmethod
    def create(cls, config: CanBlockConfig, rng: np.random.Generator) -> "CanBlock":
        return cls(config, init_params(config, rng))

    def __call__(self, x, mode: str = "train") -> Tensor:
        return can_forward(x, self.params, self.config, mode)

    def parameters(self) -> list[Tensor]:
        return self.params.tensors()

    def output_shape(self, c: int, h: int, w: int) -> tuple[int, int, int]:
        if c != self.config.c_in:
            raise DimensionError(f"block expects {self.config.c_in} channels, got {c}")
        s = self.config.stride
        return self.config.c_out, (h - 1) // s + 1, (w - 1) // s + 1


__all__ = [
    "VARIANTS",
    "AttentionShapeSummary",
    "CanBlock",
    "CanBlockConfig",
    "CanBlockParams",
    "can_forward",
    "channel_gate",
    "init_params",
    "nonlocal_core",
    "parameter_count",
    "pre_conv",
    "shape_summary",
    "spatial_attention",
    "variant_forward",
]
