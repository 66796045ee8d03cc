"""Run-directory files: resolved config, training log, metrics and plot-ready curves."""

from __future__ import annotations

import csv
from pathlib import Path

from .config import TrainConfig, format_config
from .metrics import CSV_HEADER, format_row
from .trainer import EpochRecord, GrowthEvent, TrainLog

TRAIN_LOG_HEADER = (
    "epoch",
    "phase",
    "block",
    "p",
    "train_loss",
    "val_loss",
    "val_accuracy",
    "lr",
    "augment",
    "strategy",
)
CURVES_HEADER = ("epoch", "train_loss", "val_loss", "val_accuracy", "lr", "p", "grown_blocks")


def _f(v: float) -> str:
    return f"{v:.8f}"


def _write(path: Path, header, rows, prefix_header=()) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(tuple(prefix_header) + tuple(header))
        w.writerows(rows)


def train_log_rows(tlog: TrainLog, strategy: str, prefix=()) -> list[list[str]]:
    rows = []
    for e in tlog.entries:
        if isinstance(e, GrowthEvent):
            rows.append([*prefix, str(e.epoch), "grow", str(e.block), _f(e.p), "", "", "", "", "", e.strategy])
        else:
            rows.append(
                [
                    *prefix,
                    str(e.epoch),
                    e.phase,
                    str(e.block),
                    _f(e.p),
                    _f(e.train_loss),
                    _f(e.val_loss),
                    _f(e.val_accuracy),
                    repr(e.lr),
                    "1" if e.augment else "0",
                    strategy if e.block else "",
                ]
            )
    return rows


def curve_rows(tlog: TrainLog, prefix=()) -> list[list[str]]:
    rows = []
    grown = 0
    for e in tlog.entries:
        if isinstance(e, GrowthEvent):
            grown = e.block
            continue
        rows.append(
            [*prefix, str(e.epoch), _f(e.train_loss), _f(e.val_loss), _f(e.val_accuracy), repr(e.lr), _f(e.p), str(grown)]
        )
    return rows


def metric_rows(tlog: TrainLog | None, test_metrics: dict | None, final_epoch: int, prefix=()) -> list[list[str]]:
    rows = []
    if tlog is not None:
        for e in tlog.records:
            if isinstance(e, EpochRecord):
                rows.append([*prefix, *format_row(e.phase, e.epoch, "val", e.val_metrics)])
    if test_metrics is not None:
        rows.append([*prefix, *format_row("final", final_epoch, "test", test_metrics)])
    return rows


def write_config(out: Path, cfg: TrainConfig) -> None:
    (out / "config.resolved").write_text(format_config(cfg))


def write_run(out, cfg: TrainConfig, tlog: TrainLog | None, test_metrics: dict | None) -> Path:
    """The four files every run directory carries."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    write_config(out, cfg)
    _write(out / "train_log.csv", TRAIN_LOG_HEADER, train_log_rows(tlog, cfg.blending) if tlog else [])
    _write(out / "curves.csv", CURVES_HEADER, curve_rows(tlog) if tlog else [])
    _write(out / "metrics.csv", CSV_HEADER, metric_rows(tlog, test_metrics, cfg.total_epochs))
    return out


def write_table(path, header, rows) -> None:
    _write(Path(path), header, rows)
