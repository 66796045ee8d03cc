"""Command line: train, eval, cv, ablate, gradcheck and gen-data."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .config import TrainConfig, config_from_dict, config_to_dict, desk_preset, load_config
from .datapipe import gen_synthetic, load_dataset, write_dataset
from .errors import ProcanError, UsageError
from .metrics import CSV_HEADER, METRIC_FIELDS, format_row
from .network import load_checkpoint, save_checkpoint
from .reports import (
    CURVES_HEADER,
    TRAIN_LOG_HEADER,
    curve_rows,
    metric_rows,
    train_log_rows,
    write_config,
    write_run,
    write_table,
)
from .trainer import (
    PreparedSet,
    cross_validate,
    evaluate,
    format_pm,
    prepare,
    stratified_split,
    train_procan,
)

log = logging.getLogger("procan")

ABLATION_AXES = {
    "blending": ("none", "scalar", "bernoulli"),
    "curriculum": ("none", "rating", "diameter"),
    "variant": ("NonLocal", "NonLocalSE", "DualAttention", "CAN"),
    "c_bar": ("in", "in/8", "1"),
    "blocks": None,  # base count + 0..budget, filled in from the config
}
TEST_SPLIT_TAG = 1


# -- shared plumbing --------------------------------------------------------------
def _add_data_flags(p: argparse.ArgumentParser) -> None:
    src = p.add_mutually_exclusive_group()
    src.add_argument("--dataset", type=Path, help="directory holding index.csv and volume files")
    src.add_argument("--synthetic", action="store_true", help="generate the seeded synthetic dataset")
    p.add_argument("--config", type=Path, help="key = value file overriding configuration fields")
    p.add_argument("--seed", type=int, help="master seed (model, data, mask and dropout streams derive from it)")
    p.add_argument("--out", type=Path, help="run directory")
    p.add_argument("--desk-scale", action="store_true", help="16³ cubes, channels 8/16/32/32, batch 32, two grown blocks")


def resolve_config(args) -> TrainConfig:
    # synthetic runs default to the CPU-sized preset
    base = desk_preset() if (args.desk_scale or getattr(args, "synthetic", False)) else TrainConfig()
    if args.config is not None:
        base = load_config(args.config, base)
    if args.seed is not None:
        base = base.replace(seed=args.seed)
    return base


def load_records(args, cfg: TrainConfig):
    if getattr(args, "dataset", None) is not None:
        return load_dataset(args.dataset / "index.csv", args.dataset)
    if getattr(args, "synthetic", False):
        return gen_synthetic(cfg.synthetic_n, cfg.resolved_seeds()["data_seed"], cfg.cube_size)
    raise UsageError("choose a data source: --dataset DIR or --synthetic")


def test_split(data: PreparedSet, cfg: TrainConfig) -> tuple[np.ndarray, np.ndarray]:
    seq = np.random.SeedSequence([cfg.resolved_seeds()["data_seed"], TEST_SPLIT_TAG])
    if cfg.test_fraction == 0:
        return np.arange(len(data)), np.zeros(0, dtype=np.intp)
    return stratified_split(data.labels, cfg.test_fraction, np.random.default_rng(seq))


def _print_metrics(label: str, metrics: dict) -> None:
    parts = [f"{k}={'nan' if metrics[k] is None else f'{metrics[k]:.4f}'}" for k in METRIC_FIELDS]
    print(f"{label}: " + " ".join(parts))


def train_run(cfg: TrainConfig, data: PreparedSet, out: Path) -> dict | None:
    """Hold out a test split, train, evaluate and write the run directory."""
    t0 = time.perf_counter()
    train_idx, test_idx = test_split(data, cfg)
    net, tlog = train_procan(data.subset(train_idx), cfg)
    metrics = evaluate(net, data.subset(test_idx), cfg.eval_batch_size)[0] if test_idx.size else None
    write_run(out, cfg, tlog, metrics)
    save_checkpoint(out / "checkpoint.npz", net, extra={"config": config_to_dict(cfg)})
    for note in tlog.notes:
        log.info(note)
    if metrics is not None:
        _print_metrics(f"test ({test_idx.size} samples)", metrics)
    log.info("run finished in %.1f s: %s", time.perf_counter() - t0, out)
    return metrics


# -- subcommands ---------------------------------------------------------------------
def cmd_train(args) -> int:
    cfg = resolve_config(args)
    data = prepare(load_records(args, cfg), cfg)
    train_run(cfg, data, args.out or Path("runs/train"))
    return 0


def cmd_eval(args) -> int:
    net, _, extra = load_checkpoint(args.checkpoint)
    cfg = config_from_dict(extra["config"]) if "config" in extra else resolve_config(args)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    data = prepare(load_records(args, cfg), cfg)
    # a synthetic run is scored on its own held-out split; a dataset directory is scored whole
    idx = test_split(data, cfg)[1] if args.synthetic else np.arange(len(data))
    if idx.size == 0:
        raise UsageError("test set is empty")
    metrics, scores = evaluate(net, data.subset(idx), cfg.eval_batch_size)
    out = args.out or Path("runs/eval")
    write_run(out, cfg, None, metrics)
    write_table(
        out / "scores.csv",
        ("id", "label", "score"),
        [[data.ids[i], str(data.labels[i]), f"{s:.10f}"] for i, s in zip(idx, scores)],
    )
    _print_metrics(f"eval ({idx.size} samples)", metrics)
    return 0


def cmd_cv(args) -> int:
    cfg = resolve_config(args)
    data = prepare(load_records(args, cfg), cfg)
    out = args.out or Path("runs/cv")
    out.mkdir(parents=True, exist_ok=True)
    results, summary = cross_validate(data, cfg, args.folds)
    write_config(out, cfg)
    rows, logs, curves = [], [], []
    for r in results:
        rows.append(format_row(f"fold{r.fold}", cfg.total_epochs, "test", r.metrics))
        logs += train_log_rows(r.log, cfg.blending, prefix=(str(r.fold),))
        curves += curve_rows(r.log, prefix=(str(r.fold),))
    write_table(out / "metrics.csv", CSV_HEADER, rows)
    write_table(out / "train_log.csv", ("fold",) + TRAIN_LOG_HEADER, logs)
    write_table(out / "curves.csv", ("fold",) + CURVES_HEADER, curves)
    write_table(out / "summary.csv", METRIC_FIELDS, [[format_pm(summary[k]) for k in METRIC_FIELDS]])
    for r in results:
        _print_metrics(f"fold {r.fold} ({r.n_test} samples)", r.metrics)
    print("mean±std (%): " + " ".join(f"{k}={format_pm(summary[k])}" for k in METRIC_FIELDS))
    return 0


def ablation_arms(axis: str, cfg: TrainConfig, values: list[str] | None) -> list[tuple[str, TrainConfig]]:
    if axis not in ABLATION_AXES:
        raise UsageError(f"unknown ablation axis {axis!r}; choose from {sorted(ABLATION_AXES)}")
    if values is None:
        if axis == "blocks":
            values = [str(cfg.base_block_count + k) for k in range(cfg.extended_block_budget + 1)]
        else:
            values = list(ABLATION_AXES[axis])
    arms = []
    for v in values:
        if axis == "blocks":
            extra = int(v) - cfg.base_block_count
            if extra < 0:
                raise UsageError(f"block count {v} is below the {cfg.base_block_count} base blocks")
            arms.append((v, cfg.replace(extended_block_budget=extra)))
        else:
            arms.append((v, cfg.replace(**{axis: v})))
    return arms


def cmd_ablate(args) -> int:
    cfg = resolve_config(args)
    values = args.values.split(",") if args.values else None
    arms = ablation_arms(args.axis, cfg, values)
    data = prepare(load_records(args, cfg), cfg)
    out = args.out or Path(f"runs/ablate-{args.axis}")
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for value, arm_cfg in arms:
        arm_dir = out / f"{args.axis}-{value.replace('/', '_')}"
        train_idx, test_idx = test_split(data, arm_cfg)
        net, tlog = train_procan(data.subset(train_idx), arm_cfg)
        metrics = evaluate(net, data.subset(test_idx), arm_cfg.eval_batch_size)[0] if test_idx.size else None
        write_run(arm_dir, arm_cfg, tlog, metrics)
        jump = float(np.mean(tlog.insertion_jumps)) if tlog.insertion_jumps else float("nan")
        row = [value] + (format_row("final", arm_cfg.total_epochs, "test", metrics)[3:] if metrics else ["nan"] * 5)
        rows.append(row + [f"{jump:.8f}"])
        print(f"{args.axis}={value}: " + " ".join(f"{k}={x}" for k, x in zip(METRIC_FIELDS, row[1:])) + f" jump={jump:.4f}")
    write_config(out, cfg)
    write_table(out / "ablation.csv", (args.axis,) + METRIC_FIELDS + ("mean_insertion_jump",), rows)
    return 0


def cmd_gradcheck(args) -> int:
    from .gradsuite import TOLERANCE, run_suite

    t0 = time.perf_counter()
    results = run_suite(args.seed if args.seed is not None else 0, include_network=not args.skip_network)
    worst = 0.0
    for r in results:
        worst = max(worst, r.max_rel_err)
        status = "ok" if r.passed else "FAIL"
        print(f"{status:4s} {r.name:40s} max rel err {r.max_rel_err:.3e}  ({r.n_inputs} inputs, {r.seconds:.2f} s)")
    print(f"max rel err {worst:.3e} over {len(results)} checks in {time.perf_counter() - t0:.1f} s")
    return 0 if worst < TOLERANCE else 1


def cmd_gen_data(args) -> int:
    records = gen_synthetic(args.n, args.seed, args.size)
    index = write_dataset(records, args.out)
    n_mal = sum(r.y for r in records)
    print(f"wrote {len(records)} records ({n_mal} malignant) to {index}")
    return 0


# -- entry point --------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="procan", description="Progressive channel-attentive nodule classifier")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the full training procedure and score a held-out split")
    _add_data_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a checkpoint")
    _add_data_flags(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("cv", help="stratified k-fold cross-validation")
    _add_data_flags(p)
    p.add_argument("--folds", type=int, default=10)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("ablate", help="sweep one axis with every seed held fixed")
    p.add_argument("axis", choices=sorted(ABLATION_AXES))
    p.add_argument("--values", help="comma-separated values (default: the standard sweep for the axis)")
    _add_data_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference check of every gradient")
    p.add_argument("--seed", type=int)
    p.add_argument("--skip-network", action="store_true", help="op and block checks only")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("gen-data", help="write a synthetic dataset to disk")
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=16, choices=(16, 32))
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(func=cmd_gen_data)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors and --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ProcanError as exc:
        print(f"error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
