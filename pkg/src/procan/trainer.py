"""Curriculum phases, progressive growing and refinement under one epoch budget.

Phase order for a run with T grown blocks::

    easy → full → (grow, transition ×4, settle) ×T → remainder

Every epoch of every phase is charged against ``total_epochs``. When the
budget runs out inside a phase the run stops there; a block caught
mid-transition is moved straight to its final state first.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig
from .curriculum import classify, should_stop
from .datapipe import NoduleRecord, augment_one, preprocess
from .datapipe.augment import ANGLES, AXES
from .errors import ConfigurationError, UsageError
from .metrics import evaluate_scores
from .network import Network, build, forward, make_spec
from .numerics import AdamState, adam_step, backward, bce_loss, stable_sigmoid
from .progrow import SCHEDULE, advance, grow

log = logging.getLogger(__name__)

N_VIEWS = len(AXES) * len(ANGLES)


# -- data -----------------------------------------------------------------------
@dataclass
class PreparedSet:
    """Preprocessed cubes with labels; cube i belongs to ``ids[i]``."""

    cubes: np.ndarray  # (n, S, S, S)
    fills: np.ndarray  # standardized air value per cube
    labels: np.ndarray  # 0 benign, 1 malignant
    ids: list[str]
    difficulty: list[str]

    def __len__(self) -> int:
        return len(self.ids)

    def subset(self, idx) -> "PreparedSet":
        idx = np.asarray(idx, dtype=np.intp)
        return PreparedSet(
            self.cubes[idx],
            self.fills[idx],
            self.labels[idx],
            [self.ids[i] for i in idx],
            [self.difficulty[i] for i in idx],
        )


def prepare(records: list[NoduleRecord], config: TrainConfig) -> PreparedSet:
    """Resample, crop, clamp and standardize every record (32 mm field of view)."""
    if not records:
        raise UsageError("no records to prepare")
    size = config.cube_size
    target = 32.0 / size
    cubes, fills = [], []
    for rec in records:
        if rec.volume is None:
            raise UsageError(f"record {rec.id} has no volume loaded")
        cube, fill = preprocess(rec.volume, rec.center_mm, size, target)
        cubes.append(cube)
        fills.append(fill)
    return PreparedSet(
        np.stack(cubes),
        np.asarray(fills),
        np.array([r.y for r in records], dtype=np.int64),
        [r.id for r in records],
        [classify(r, config.curriculum) for r in records],
    )


def stratified_split(labels, fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """(kept, held-out) indices; each class contributes round(fraction·n_c), at least one when n_c ≥ 2."""
    labels = np.asarray(labels)
    kept, held = [], []
    for c in (0, 1):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(idx.size)]
        k = int(round(fraction * idx.size))
        if fraction > 0 and idx.size >= 2:
            k = max(k, 1)
        held.append(idx[:k])
        kept.append(idx[k:])
    return np.sort(np.concatenate(kept)), np.sort(np.concatenate(held))


def stratified_folds(labels, folds: int, rng: np.random.Generator) -> np.ndarray:
    """Fold number per sample, dealing each shuffled class round-robin."""
    labels = np.asarray(labels)
    if folds < 2 or labels.size < folds:
        raise ConfigurationError(f"need at least 2 folds and no more folds than samples ({labels.size})")
    assign = np.empty(labels.size, dtype=np.int64)
    offset = 0
    for c in (0, 1):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(idx.size)]
        assign[idx] = (np.arange(idx.size) + offset) % folds
        offset += idx.size
    return assign


# -- log ------------------------------------------------------------------------
@dataclass
class EpochRecord:
    epoch: int
    phase: str
    block: int  # 0 when no grown block is in play
    p: float
    train_loss: float
    val_loss: float
    val_accuracy: float
    lr: float
    augment: bool
    val_metrics: dict = field(default_factory=dict, repr=False)


@dataclass
class GrowthEvent:
    block: int
    epoch: int  # epochs completed when the block was attached
    p: float
    strategy: str


@dataclass
class TrainLog:
    entries: list = field(default_factory=list)  # EpochRecord and GrowthEvent, in order
    insertion_jumps: list[float] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def records(self) -> list[EpochRecord]:
        return [e for e in self.entries if isinstance(e, EpochRecord)]

    @property
    def events(self) -> list[GrowthEvent]:
        return [e for e in self.entries if isinstance(e, GrowthEvent)]

    def phase_sequence(self) -> list[str]:
        """Phase tags with consecutive repeats collapsed, growth events as ``grow``."""
        seq: list[str] = []
        for e in self.entries:
            tag = "grow" if isinstance(e, GrowthEvent) else e.phase
            if tag == "transition" or not seq or seq[-1] != tag:
                seq.append(tag)
        return seq


# -- training -------------------------------------------------------------------
def spec_for(config: TrainConfig):
    s = config.cube_size
    return make_spec(
        (s, s, s),
        list(config.channels),
        list(config.strides),
        c_bar=config.c_bar,
        variant=config.variant,
        dropout_p=config.dropout_p,
        extended_budget=config.extended_block_budget,
        blending=config.blending,
    )


def learning_rate(config: TrainConfig, epoch: int) -> float:
    return config.lr_initial if epoch < config.lr_drop_epoch else config.lr_after_epoch20


def eval_logits(net: Network, cubes: np.ndarray, batch_size: int = 64) -> np.ndarray:
    out = [forward(net, cubes[i : i + batch_size], mode="eval").data for i in range(0, len(cubes), batch_size)]
    return np.concatenate(out) if out else np.zeros(0)


def _bce(logits: np.ndarray, y: np.ndarray) -> float:
    z = logits
    return float(np.mean(np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))))


def batch_chunks(order: np.ndarray, batch_size: int) -> list[np.ndarray]:
    """Consecutive batches of ``order``; a lone trailing sample joins the batch before it."""
    chunks = [order[i : i + batch_size] for i in range(0, len(order), batch_size)]
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        tail = chunks.pop()
        chunks[-1] = np.concatenate([chunks[-1], tail])
    return chunks


class _Run:
    """Mutable state of one training run."""

    def __init__(self, train: PreparedSet, val: PreparedSet, config: TrainConfig, seeds: dict[str, int]):
        self.cfg = config
        self.train = train
        self.val = val
        self.data_rng = np.random.default_rng(seeds["data_seed"])
        self.net = build(
            spec_for(config),
            np.random.default_rng(seeds["model_seed"]),
            dropout_rng=np.random.default_rng(seeds["dropout_seed"]),
            mask_rng=np.random.default_rng(seeds["mask_seed"]),
        )
        self.opt_params = self.net.parameters()
        self.adam = AdamState.for_params(self.opt_params)
        self.epoch = 0
        self.log = TrainLog()

    @property
    def exhausted(self) -> bool:
        return self.epoch >= self.cfg.total_epochs

    def sync_optimizer(self) -> None:
        """Carry moments over by identity and start fresh ones for new parameters."""
        old = {id(p): (m, v) for p, m, v in zip(self.opt_params, self.adam.first_moment, self.adam.second_moment)}
        params = self.net.parameters()
        first, second = [], []
        for p in params:
            m, v = old.get(id(p), (np.zeros_like(p.data), np.zeros_like(p.data)))
            first.append(m)
            second.append(v)
        self.adam.first_moment, self.adam.second_moment = first, second
        self.opt_params = params

    def decays(self) -> list[float]:
        return [self.cfg.fc_weight_decay if n.startswith("fc.") else 0.0 for n, _ in self.net.named_parameters()]

    def stream(self, idx: np.ndarray, augment: bool) -> list[tuple[int, int]]:
        """(sample, view) pairs for one epoch; view 0 is the unrotated cube."""
        if not augment:
            return [(int(i), 0) for i in idx]
        if self.cfg.augment_mode == "full":
            return [(int(i), v) for i in idx for v in range(N_VIEWS)]
        views = self.data_rng.integers(0, N_VIEWS, size=len(idx))
        return [(int(i), int(v)) for i, v in zip(idx, views)]

    def batch(self, pairs) -> tuple[np.ndarray, np.ndarray]:
        cubes = np.stack([augment_one(self.train.cubes[i], v, self.train.fills[i]) for i, v in pairs])
        return cubes, self.train.labels[[i for i, _ in pairs]].astype(np.float64)

    def validate(self) -> tuple[float, float, dict]:
        logits = eval_logits(self.net, self.val.cubes, self.cfg.eval_batch_size)
        y = self.val.labels
        scores = stable_sigmoid(logits)
        metrics = evaluate_scores(scores, y)
        return _bce(logits, y), float(metrics["accuracy"]), metrics

    def run_epoch(self, idx: np.ndarray, phase: str, block: int = 0, p: float = 0.0) -> EpochRecord:
        self.epoch += 1
        cfg = self.cfg
        lr = learning_rate(cfg, self.epoch)
        augment = cfg.augment_mode != "off" and self.epoch < cfg.refine_start_epoch
        pairs = self.stream(idx, augment)
        order = self.data_rng.permutation(len(pairs))
        chunks = batch_chunks(order, cfg.batch_size)
        total, count = 0.0, 0
        decays = self.decays()
        self.net.train()
        for chunk in chunks:
            if len(chunk) < 2:
                continue
            xb, yb = self.batch([pairs[k] for k in chunk])
            loss = bce_loss(forward(self.net, xb, "train"), yb)
            grads = backward(loss, self.opt_params)
            adam_step(self.opt_params, grads, self.adam, lr, decays)
            total += loss.item() * len(chunk)
            count += len(chunk)
        self.net.eval()
        val_loss, val_acc, metrics = self.validate()
        rec = EpochRecord(self.epoch, phase, block, p, total / max(count, 1), val_loss, val_acc, lr, augment, metrics)
        self.log.entries.append(rec)
        log.debug("epoch %d %s loss %.4f val acc %.4f", self.epoch, phase, rec.train_loss, val_acc)
        return rec

    def until_stop(self, idx: np.ndarray, phase: str, block: int = 0) -> None:
        history: list[float] = []
        p = 1.0 if block else 0.0
        while not self.exhausted:
            history.append(self.run_epoch(idx, phase, block, p).val_accuracy)
            if should_stop(history):
                return
            if self.cfg.max_phase_epochs and len(history) >= self.cfg.max_phase_epochs:
                return
        self.log.notes.append(f"epoch budget exhausted during {phase} phase")


def train_procan(
    train_set: PreparedSet,
    config: TrainConfig,
    seeds: dict[str, int] | None = None,
) -> tuple[Network, TrainLog]:
    """Split off validation, then run every phase against the global epoch budget."""
    if len(train_set) == 0:
        raise UsageError("training set is empty")
    seeds = seeds if seeds is not None else config.resolved_seeds()
    split_rng = np.random.default_rng(seeds["data_seed"])
    fit_idx, val_idx = stratified_split(train_set.labels, config.validation_fraction, split_rng)
    if val_idx.size == 0 or fit_idx.size < 2:
        raise ConfigurationError("training set too small for a validation split")
    fit, val = train_set.subset(fit_idx), train_set.subset(val_idx)
    run = _Run(fit, val, config, {**seeds, "data_seed": int(split_rng.integers(2**63))})

    everything = np.arange(len(fit))
    easy = np.array([i for i, d in enumerate(fit.difficulty) if d == "easy"], dtype=np.intp)
    if easy.size < 2:
        raise ConfigurationError(
            f"the {config.curriculum!r} criterion leaves no easy training samples; choose another curriculum"
        )

    run.until_stop(easy, "easy")
    run.until_stop(everything, "full")
    net = run.net
    for b in range(1, config.extended_block_budget + 1):
        if run.exhausted:
            break
        before, _, _ = run.validate()
        grow(net, net.model_rng)
        run.sync_optimizer()
        ext = net.extended[-1]
        run.log.entries.append(GrowthEvent(b, run.epoch, 0.0, ext.state.strategy))
        for step in range(len(SCHEDULE)):
            if run.exhausted:
                while ext.state.phase != "final":
                    advance(ext.state, net.mask_rng, ext.spatial)
                run.log.notes.append(f"epoch budget exhausted while blending block {b}; block finalized")
                break
            advance(ext.state, net.mask_rng, ext.spatial)
            if step == 0:
                after, _, _ = run.validate()
                run.log.insertion_jumps.append(after - before)
            run.run_epoch(everything, "transition", b, ext.state.p)
        run.until_stop(everything, "settle", b)
    while not run.exhausted:
        run.run_epoch(everything, "remainder", len(net.extended), 1.0 if net.extended else 0.0)
    net.eval()
    return net, run.log


# -- evaluation -----------------------------------------------------------------
def evaluate(net: Network, test_set: PreparedSet, batch_size: int = 64) -> tuple[dict, np.ndarray]:
    """Eval-mode metrics on unaugmented cubes, plus the scores they came from."""
    if len(test_set) == 0:
        raise UsageError("test set is empty")
    net.eval()
    scores = stable_sigmoid(eval_logits(net, test_set.cubes, batch_size))
    return evaluate_scores(scores, test_set.labels), scores


def ensemble_predict(members: list[Network], batch, batch_size: int = 64) -> np.ndarray:
    """Arithmetic mean of the members' probabilities."""
    if len(members) < 2:
        raise ConfigurationError("an ensemble needs at least two members")
    shape = members[0].spec.input_shape
    if any(m.spec.input_shape != shape for m in members):
        raise ConfigurationError("ensemble members expect different input shapes")
    x = np.asarray(batch, dtype=np.float64)
    probs = [stable_sigmoid(eval_logits(m, x, batch_size)) for m in members]
    return np.mean(probs, axis=0)


def train_ensemble(
    train_set: PreparedSet, config: TrainConfig, block_counts=(6, 7, 8)
) -> list[tuple[Network, TrainLog]]:
    """One network per total block count, differing only in how many blocks are grown."""
    out = []
    for count in block_counts:
        extra = count - config.base_block_count
        if extra < 0:
            raise ConfigurationError(f"block count {count} is below the {config.base_block_count} base blocks")
        out.append(train_procan(train_set, config.replace(extended_block_budget=extra)))
    return out


@dataclass
class FoldResult:
    fold: int
    n_test: int
    metrics: dict
    log: TrainLog = field(default_factory=TrainLog, repr=False)


def summarize(values) -> tuple[float, float] | None:
    vals = [v for v in values if v is not None]
    if not vals:
        return None
    arr = np.asarray(vals, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def format_pm(stat: tuple[float, float] | None, scale: float = 100.0) -> str:
    """``mean±std`` in percent with two decimals; ``nan`` when undefined."""
    if stat is None:
        return "nan"
    return f"{stat[0] * scale:.2f}±{stat[1] * scale:.2f}"


def cross_validate(
    data: PreparedSet, config: TrainConfig, folds: int = 10
) -> tuple[list[FoldResult], dict[str, tuple[float, float] | None]]:
    """Stratified k-fold: each sample is tested exactly once."""
    seeds = config.resolved_seeds()
    assign = stratified_folds(data.labels, folds, np.random.default_rng(seeds["data_seed"]))
    results = []
    for k in range(folds):
        test_idx = np.flatnonzero(assign == k)
        train_idx = np.flatnonzero(assign != k)
        net, tlog = train_procan(data.subset(train_idx), config, seeds)
        metrics, _ = evaluate(net, data.subset(test_idx), config.eval_batch_size)
        if metrics["auc"] is None:
            log.warning("fold %d has a single class; AUC undefined", k)
        results.append(FoldResult(k, int(test_idx.size), metrics, tlog))
    keys = results[0].metrics.keys()
    summary = {key: summarize(r.metrics[key] for r in results) for key in keys}
    return results, summary


def insertion_jump_study(
    data: PreparedSet, config: TrainConfig, seeds, strategies=("none", "scalar", "bernoulli")
) -> dict[str, list[float]]:
    """Mean validation-loss jump at block insertion, per strategy and seed.

    All strategies share every seed, so arms differ only in blending.
    """
    out: dict[str, list[float]] = {s: [] for s in strategies}
    for seed in seeds:
        for s in strategies:
            _, tlog = train_procan(data, config.replace(blending=s, seed=int(seed)))
            jumps = tlog.insertion_jumps
            out[s].append(float(np.mean(jumps)) if jumps else float("nan"))
    return out
