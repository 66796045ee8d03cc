"""The ProCAN classifier: base CAN blocks, grown blocks, GAP, dropout and a linear head."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .attention import CanBlock, CanBlockConfig, VARIANTS
from .errors import ConfigurationError, DimensionError
from .numerics import AdamState, Tensor, as_tensor, dropout, global_avg_pool, parameter, stable_sigmoid
from .progrow import STRATEGIES, ExtendedBlock, GrowthState

CHECKPOINT_FORMAT = "procan-checkpoint-v1"


@dataclass
class NetworkSpec:
    """Architecture description; ``input_shape`` is (depth-as-channels, H, W)."""

    input_shape: tuple[int, int, int]
    base_blocks: list[CanBlockConfig]
    dropout_p: float = 0.5
    extended_budget: int = 3
    extended_c_bar: int = 1
    extended_variant: str = "CAN"
    blending: str = "bernoulli"

    def __post_init__(self):
        self.input_shape = tuple(int(v) for v in self.input_shape)
        if not self.base_blocks:
            raise ConfigurationError("a network needs at least one base block")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigurationError(f"dropout probability must be in [0, 1), got {self.dropout_p}")
        if self.blending not in STRATEGIES:
            raise ConfigurationError(f"unknown blending strategy {self.blending!r}")
        if self.extended_variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.extended_variant!r}")
        if self.extended_budget < 0:
            raise ConfigurationError("extended_budget must be non-negative")
        self.shape_chain()

    def shape_chain(self) -> list[tuple[int, int, int]]:
        """(C, H, W) after every base block, validating that the blocks chain."""
        c, h, w = self.input_shape
        shapes = []
        for i, cfg in enumerate(self.base_blocks):
            if cfg.c_in != c:
                raise ConfigurationError(f"base block {i + 1} expects {cfg.c_in} channels but receives {c}")
            h, w = (h - 1) // cfg.stride + 1, (w - 1) // cfg.stride + 1
            c = cfg.c_out
            shapes.append((c, h, w))
        return shapes

    @property
    def fc_in(self) -> int:
        return self.base_blocks[-1].c_out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        d = dict(d)
        d["base_blocks"] = [CanBlockConfig(**b) for b in d["base_blocks"]]
        d["input_shape"] = tuple(d["input_shape"])
        return cls(**d)


def resolve_c_bar(rule: int | str, c_in: int) -> int:
    """Intermediate width for a block with ``c_in`` inputs.

    ``rule`` is a positive integer (capped at ``c_in``), ``0`` or ``"in"`` for
    C̄ = C_in, or ``"in/K"`` for C̄ = max(1, C_in // K).
    """
    text = str(rule).strip().lower()
    if text in ("0", "in"):
        return c_in
    if text.startswith("in/"):
        try:
            k = int(text[3:])
        except ValueError as exc:
            raise ConfigurationError(f"bad intermediate-width rule {rule!r}") from exc
        if k < 1:
            raise ConfigurationError(f"bad intermediate-width rule {rule!r}")
        return max(1, c_in // k)
    try:
        value = int(text)
    except ValueError as exc:
        raise ConfigurationError(f"bad intermediate-width rule {rule!r}") from exc
    if value < 0:
        raise ConfigurationError(f"intermediate width must be positive, got {value}")
    return min(value, c_in)


def make_spec(
    input_shape: tuple[int, int, int],
    channels: list[int],
    strides: list[int],
    c_bar: int | str = 1,
    variant: str = "CAN",
    **kwargs,
) -> NetworkSpec:
    """Chain base blocks from a channel plan; ``c_bar`` follows :func:`resolve_c_bar`."""
    if len(channels) != len(strides):
        raise ConfigurationError("channel plan and stride plan must have equal length")
    blocks = []
    c = input_shape[0]
    for c_out, stride in zip(channels, strides):
        blocks.append(CanBlockConfig(c, c_out, resolve_c_bar(c_bar, c), stride, variant))
        c = c_out
    kwargs.setdefault("extended_variant", variant)
    kwargs.setdefault("extended_c_bar", resolve_c_bar(c_bar, c))
    return NetworkSpec(tuple(input_shape), blocks, **kwargs)


def full_spec(**kwargs) -> NetworkSpec:
    """Full-size architecture: 32×32×32 input, four base blocks, up to three grown blocks."""
    return make_spec((32, 32, 32), [32, 64, 128, 256], [1, 2, 2, 1], **kwargs)


def desk_spec(**kwargs) -> NetworkSpec:
    """Reduced architecture for CPU runs: 16×16×16 input, channels 8/16/32/32."""
    kwargs.setdefault("extended_budget", 2)
    return make_spec((16, 16, 16), [8, 16, 32, 32], [1, 2, 2, 1], **kwargs)


@dataclass
class Network:
    spec: NetworkSpec
    base: list[CanBlock]
    fc_weight: Tensor
    fc_bias: Tensor
    extended: list[ExtendedBlock] = field(default_factory=list)
    mode: str = "train"
    model_rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0), repr=False)
    dropout_rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(1), repr=False)
    mask_rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(2), repr=False)

    def feature_shape(self) -> tuple[int, int, int]:
        return self.spec.shape_chain()[-1]

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for i, blk in enumerate(self.base):
            out += [(f"base{i}.{n}", t) for n, t in blk.params.named_tensors()]
        for i, ext in enumerate(self.extended):
            out += [(f"ext{i}.{n}", t) for n, t in ext.block.params.named_tensors()]
        out += [("fc.weight", self.fc_weight), ("fc.bias", self.fc_bias)]
        return out

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_parameters()]

    def blocks(self) -> list[CanBlock]:
        return self.base + [e.block for e in self.extended]

    def train(self) -> "Network":
        self.mode = "train"
        return self

    def eval(self) -> "Network":
        self.mode = "eval"
        return self


def build(spec: NetworkSpec, rng: np.random.Generator | None = None, dropout_rng=None, mask_rng=None) -> Network:
    rng = rng if rng is not None else np.random.default_rng(0)
    base = [CanBlock.create(cfg, rng) for cfg in spec.base_blocks]
    bound = 1.0 / np.sqrt(spec.fc_in)
    fc_w = parameter(rng.uniform(-bound, bound, size=(1, spec.fc_in)), "fc.weight")
    fc_b = parameter(np.zeros(1), "fc.bias")
    return Network(
        spec,
        base,
        fc_w,
        fc_b,
        model_rng=rng,
        dropout_rng=dropout_rng if dropout_rng is not None else np.random.default_rng(rng.integers(2**63)),
        mask_rng=mask_rng if mask_rng is not None else np.random.default_rng(rng.integers(2**63)),
    )


def features(net: Network, batch, mode: str | None = None, trace: list | None = None) -> Tensor:
    """Output of the last (possibly blended) block, before pooling."""
    mode = mode or net.mode
    x = as_tensor(batch)
    if x.ndim != 4 or tuple(x.shape[1:]) != net.spec.input_shape:
        raise DimensionError(f"network expects (B, {net.spec.input_shape}), got {x.shape}")
    h = x
    for blk in net.base:
        h = blk(h, mode)
        if trace is not None:
            trace.append(h.shape[1:])
    for ext in net.extended:
        h = ext.apply(h, mode, net.mask_rng)
        if trace is not None:
            trace.append(h.shape[1:])
    return h


def forward(net: Network, batch, mode: str | None = None, trace: list | None = None) -> Tensor:
    """Raw logits, shape (B,)."""
    mode = mode or net.mode
    h = features(net, batch, mode, trace)
    pooled = global_avg_pool(h)
    if trace is not None:
        trace.append((pooled.shape[1], 1, 1))
    pooled = dropout(pooled, net.spec.dropout_p, mode, net.dropout_rng)
    logits = pooled @ net.fc_weight.mT + net.fc_bias
    if trace is not None:
        trace.append((1,))
    return logits.reshape(logits.shape[0])


def predict_proba(net: Network, batch, batch_size: int = 64) -> np.ndarray:
    """Sigmoid of eval-mode logits, evaluated in chunks."""
    x = np.asarray(batch, dtype=np.float64)
    out = [stable_sigmoid(forward(net, x[i : i + batch_size], mode="eval").data) for i in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.zeros(0)


def param_count(net: Network) -> int:
    return int(sum(t.size for t in net.parameters()))


# -- checkpoints ----------------------------------------------------------------
def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def _rng_from_state(state: dict) -> np.random.Generator:
    bitgen = getattr(np.random, state["bit_generator"])()
    bitgen.state = state
    return np.random.Generator(bitgen)


def save_checkpoint(path, net: Network, optimizer: AdamState | None = None, extra: dict | None = None) -> Path:
    """Write an ``.npz`` holding every array plus a JSON header under key ``meta``.

    The header records the spec, growth states, optimizer scalars, the
    three network RNG states and any caller-supplied ``extra`` JSON.
    """
    path = Path(path)
    arrays: dict[str, np.ndarray] = {}
    for name, t in net.named_parameters():
        arrays[f"param/{name}"] = t.data
    for prefix, blk in [(f"base{i}", b) for i, b in enumerate(net.base)] + [
        (f"ext{i}", e.block) for i, e in enumerate(net.extended)
    ]:
        arrays[f"bn/{prefix}/running_mean"] = blk.params.bn.running_mean
        arrays[f"bn/{prefix}/running_var"] = blk.params.bn.running_var
    for i, ext in enumerate(net.extended):
        if ext.state.omega is not None:
            arrays[f"omega/{i}"] = ext.state.omega
    meta = {
        "format": CHECKPOINT_FORMAT,
        "spec": net.spec.to_dict(),
        "mode": net.mode,
        "extended": [
            {"config": asdict(e.block.config), "state": e.state.to_dict(), "spatial": list(e.spatial)} for e in net.extended
        ],
        "rng": {k: _rng_state(getattr(net, k)) for k in ("model_rng", "dropout_rng", "mask_rng")},
        "extra": extra or {},
    }
    if optimizer is not None:
        for i, (m, v) in enumerate(zip(optimizer.first_moment, optimizer.second_moment)):
            arrays[f"adam/m/{i}"] = m
            arrays[f"adam/v/{i}"] = v
        meta["adam"] = {
            "step": optimizer.step,
            "beta1": optimizer.beta1,
            "beta2": optimizer.beta2,
            "eps": optimizer.eps,
            "count": len(optimizer.first_moment),
        }
    arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path) -> tuple[Network, AdamState | None, dict]:
    with np.load(Path(path)) as z:
        arrays = {k: z[k] for k in z.files}
    meta = json.loads(arrays.pop("meta").tobytes().decode())
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise ConfigurationError(f"unrecognised checkpoint format {meta.get('format')!r}")
    spec = NetworkSpec.from_dict(meta["spec"])
    net = build(spec, np.random.default_rng(0))
    for i, e in enumerate(meta["extended"]):
        cfg = CanBlockConfig(**e["config"])
        st = e["state"]
        state = GrowthState(st["strategy"], st["phase"], st["p"], arrays.get(f"omega/{i}"), list(st["schedule"]))
        net.extended.append(ExtendedBlock(CanBlock.create(cfg, np.random.default_rng(0)), state, tuple(e["spatial"])))
    for name, t in net.named_parameters():
        t.data = np.array(arrays[f"param/{name}"], dtype=np.float64)
    for prefix, blk in [(f"base{i}", b) for i, b in enumerate(net.base)] + [
        (f"ext{i}", e.block) for i, e in enumerate(net.extended)
    ]:
        blk.params.bn.running_mean = np.array(arrays[f"bn/{prefix}/running_mean"])
        blk.params.bn.running_var = np.array(arrays[f"bn/{prefix}/running_var"])
    net.mode = meta["mode"]
    for k, st in meta["rng"].items():
        setattr(net, k, _rng_from_state(st))
    optimizer = None
    if "adam" in meta:
        a = meta["adam"]
        optimizer = AdamState(
            [np.array(arrays[f"adam/m/{i}"]) for i in range(a["count"])],
            [np.array(arrays[f"adam/v/{i}"]) for i in range(a["count"])],
            a["step"],
            a["beta1"],
            a["beta2"],
            a["eps"],
        )
    return net, optimizer, meta["extra"]
