"""Training configuration and its flat ``key = value`` file format.

Lines are ``key = value``; ``#`` starts a comment; blank lines are ignored.
Tuples are comma-separated, optional seeds accept ``none``. Unknown keys
are rejected.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .curriculum import CRITERIA
from .errors import ConfigurationError
from .progrow import STRATEGIES
from .attention import VARIANTS
from .network import resolve_c_bar

AUGMENT_MODES = ("full", "sample", "off")


@dataclass(frozen=True)
class TrainConfig:
    total_epochs: int = 60
    batch_size: int = 256
    lr_initial: float = 1e-3
    lr_after_epoch20: float = 1e-4
    lr_drop_epoch: int = 20
    refine_start_epoch: int = 51
    fc_weight_decay: float = 1e-4
    dropout_p: float = 0.5
    base_block_count: int = 4
    extended_block_budget: int = 3
    curriculum: str = "diameter"
    blending: str = "bernoulli"
    validation_fraction: float = 0.10
    test_fraction: float = 0.20
    seed: int = 0
    model_seed: int | None = None
    data_seed: int | None = None
    mask_seed: int | None = None
    dropout_seed: int | None = None
    cube_size: int = 32
    channels: tuple[int, ...] = (32, 64, 128, 256)
    strides: tuple[int, ...] = (1, 2, 2, 1)
    c_bar: str = "1"  # integer, "in" (C̄ = C_in) or "in/K"
    variant: str = "CAN"
    augment_mode: str = "full"
    max_phase_epochs: int = 0  # 0: a phase runs until the stopping rule fires
    synthetic_n: int = 500
    eval_batch_size: int = 64

    def __post_init__(self):
        for name in ("total_epochs", "batch_size", "lr_drop_epoch", "refine_start_epoch", "cube_size", "eval_batch_size"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be at least 1")
        if self.batch_size < 2:
            raise ConfigurationError("batch_size must be at least 2 (batch statistics need two samples)")
        if self.refine_start_epoch > self.total_epochs:
            raise ConfigurationError("refine_start_epoch must not exceed total_epochs")
        if not 0.0 < self.validation_fraction < 0.5:
            raise ConfigurationError("validation_fraction must lie in (0, 0.5)")
        if not 0.0 <= self.test_fraction < 0.5:
            raise ConfigurationError("test_fraction must lie in [0, 0.5)")
        if self.lr_initial <= 0 or self.lr_after_epoch20 <= 0:
            raise ConfigurationError("learning rates must be positive")
        if self.fc_weight_decay < 0:
            raise ConfigurationError("fc_weight_decay must be non-negative")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigurationError("dropout_p must lie in [0, 1)")
        if len(self.channels) != self.base_block_count or len(self.strides) != self.base_block_count:
            raise ConfigurationError("channels and strides need one entry per base block")
        if self.extended_block_budget < 0 or self.max_phase_epochs < 0:
            raise ConfigurationError("extended_block_budget and max_phase_epochs must be non-negative")
        object.__setattr__(self, "c_bar", str(self.c_bar))
        resolve_c_bar(self.c_bar, 1)
        if self.curriculum not in CRITERIA:
            raise ConfigurationError(f"curriculum must be one of {CRITERIA}")
        if self.blending not in STRATEGIES:
            raise ConfigurationError(f"blending must be one of {STRATEGIES}")
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"variant must be one of {VARIANTS}")
        if self.augment_mode not in AUGMENT_MODES:
            raise ConfigurationError(f"augment_mode must be one of {AUGMENT_MODES}")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def resolved_seeds(self) -> dict[str, int]:
        """Model, data, mask and dropout seeds; unset ones come from ``seed``."""
        children = np.random.SeedSequence(self.seed).spawn(4)
        out = {}
        for name, child in zip(("model_seed", "data_seed", "mask_seed", "dropout_seed"), children):
            explicit = getattr(self, name)
            out[name] = int(explicit) if explicit is not None else int(child.generate_state(1)[0])
        return out


def desk_preset(**changes) -> TrainConfig:
    """CPU-sized run: 16³ cubes, channels 8/16/32/32, batch 32, two grown blocks."""
    base = TrainConfig(
        batch_size=32,
        extended_block_budget=2,
        cube_size=16,
        channels=(8, 16, 32, 32),
        augment_mode="sample",
        max_phase_epochs=12,
    )
    return base.replace(**changes)


_OPTIONAL = {"model_seed", "data_seed", "mask_seed", "dropout_seed"}
_TUPLES = {"channels", "strides"}


def _convert(name: str, text: str, default):
    text = text.strip()
    try:
        if name in _OPTIONAL:
            return None if text.lower() == "none" else int(text)
        if name in _TUPLES:
            return tuple(int(v) for v in text.split(",") if v.strip())
        if isinstance(default, bool):
            return text.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigurationError(f"bad value for {name}: {text!r}") from exc


def parse_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    base = base if base is not None else TrainConfig()
    known = {f.name: getattr(base, f.name) for f in fields(TrainConfig)}
    changes = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"config line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ConfigurationError(f"config line {lineno}: unknown key {key!r}")
        changes[key] = _convert(key, value, known[key])
    return base.replace(**changes)


def load_config(path, base: TrainConfig | None = None) -> TrainConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file {path} does not exist")
    return parse_config(path.read_text(), base)


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def format_config(cfg: TrainConfig, resolved: bool = True) -> str:
    """Text that :func:`parse_config` reads back to ``cfg``; ``resolved`` also pins the derived seeds."""
    lines = [
        "# resolved training configuration",
        "# fc_weight_decay applies to fc.weight and fc.bias only; every other parameter is undecayed.",
        "# dropout_p is the only 0.5-valued regulariser; a weight decay of 0.5 is not used.",
    ]
    seeds = cfg.resolved_seeds() if resolved else {}
    for f in fields(TrainConfig):
        value = getattr(cfg, f.name)
        if f.name in seeds:
            value = seeds[f.name]
        lines.append(f"{f.name} = {_format(value)}")
    return "\n".join(lines) + "\n"


def config_to_dict(cfg: TrainConfig) -> dict:
    d = dataclasses.asdict(cfg)
    for k in _TUPLES:
        d[k] = list(d[k])
    return d


def config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    for k in _TUPLES:
        if k in d:
            d[k] = tuple(d[k])
    unknown = set(d) - {f.name for f in fields(TrainConfig)}
    if unknown:
        raise ConfigurationError(f"unknown configuration keys {sorted(unknown)}")
    return TrainConfig(**d)
