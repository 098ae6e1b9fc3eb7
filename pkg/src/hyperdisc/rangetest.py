"""Learning-rate range test: one run with a linearly increasing LR."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .diagnostics import ema
from .harness import RunConfig, RunLog, build_objective, train
from .schedules import LrPolicy

MODE_FACTORS = {"cycle": 3.0, "one_cycle": 10.0, "constant": 3.0}
FACTOR_RANGES = {"cycle": (3.0, 4.0), "one_cycle": (10.0, 20.0), "constant": (3.0, 4.0)}


class RangeTestError(ValueError):
    pass


class RangeSample(NamedTuple):
    lr: float
    smoothed_val_loss: float
    raw_val_loss: float
    val_acc: float
    train_loss: float


@dataclass
class RangeTestReport:
    samples: list[RangeSample]
    lr_min: float
    lr_max: float
    divergence_lr: float | None
    min_loss_lr: float | None
    diverged_at_start: bool = False
    log: RunLog | None = None

    def suggested(self) -> dict:
        out = {}
        for mode in MODE_FACTORS:
            try:
                out[mode] = suggest_bounds(self, mode)
            except RangeTestError:
                out[mode] = None
        return out

    def summary(self) -> dict:
        return {
            "lr_min": self.lr_min, "lr_max": self.lr_max,
            "divergence_lr": self.divergence_lr, "min_loss_lr": self.min_loss_lr,
            "diverged_at_start": self.diverged_at_start,
            "samples": len(self.samples),
            "suggested": {k: list(v) if v else None for k, v in self.suggested().items()},
        }

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(RangeSample._fields)
            for s in self.samples:
                w.writerow([repr(float(v)) for v in s])

    def write(self, csv_path, summary_path) -> None:
        self.to_csv(csv_path)
        with open(summary_path, "w") as f:
            json.dump(self.summary(), f, indent=2)


def ramp_config(config: RunConfig, n_train: int, lr_min: float, lr_max: float) -> RunConfig:
    total = config.total_iters(n_train)
    return replace(config, lr_policy=LrPolicy.ramp(lr_min, lr_max, total))


def run_range_test(config: RunConfig, data, lr_min: float, lr_max: float) -> RangeTestReport:
    """Sweep the LR linearly from ``lr_min`` to ``lr_max`` over the configured run.

    The config's momentum policy is kept, so cyclic momentum can be combined
    with the ramp. The run stops early if the harness detects divergence.
    """
    if not 0 < lr_min < lr_max:
        raise RangeTestError(f"need 0 < lr_min < lr_max, got {lr_min}, {lr_max}")
    obj = build_objective(config, data)
    cfg = ramp_config(config, obj.n_train, lr_min, lr_max)
    log = train(cfg, obj)
    log.state = None
    return report_from_log(log, lr_min, lr_max)


def report_from_log(log: RunLog, lr_min: float, lr_max: float) -> RangeTestReport:
    recs = log.eval_records()
    raw = np.array([r.val_loss for r in recs])
    smooth = ema(raw) if len(raw) else raw
    samples = [RangeSample(r.lr, float(s), r.val_loss, r.val_acc, r.train_loss)
               for r, s in zip(recs, smooth)]
    divergence_lr = log.halt_lr if log.diverged else None
    if divergence_lr is not None:
        samples = [s for s in samples if s.lr < divergence_lr]
    min_loss_lr = None
    at_start = False
    if samples:
        k = int(np.argmin([s.smoothed_val_loss for s in samples]))
        min_loss_lr = samples[k].lr
        # diverging before the loss ever improved on its starting value
        at_start = log.diverged and k == 0
    else:
        at_start = log.diverged
    if at_start:
        min_loss_lr = None
    return RangeTestReport(samples, lr_min, lr_max, divergence_lr, min_loss_lr, at_start, log)


def suggest_bounds(report: RangeTestReport, mode: str = "one_cycle",
                   factor: float | None = None) -> tuple[float, float]:
    """LR bounds from a range test.

    ``max_lr`` is the LR at the smoothed-loss minimum. ``min_lr`` is
    ``max_lr / factor``: 3 to 4 for repeated cycles, 10 to 20 for one cycle.
    In ``constant`` mode the returned ``min_lr`` is the LR to hold fixed.
    """
    if mode not in MODE_FACTORS:
        raise RangeTestError(f"unknown mode {mode!r}; expected one of {tuple(MODE_FACTORS)}")
    if report.diverged_at_start or report.min_loss_lr is None:
        raise RangeTestError("range test diverged before the loss improved; no usable maximum")
    if factor is None:
        factor = MODE_FACTORS[mode]
    lo, hi = FACTOR_RANGES[mode]
    if not lo <= factor <= hi:
        raise RangeTestError(f"{mode} factor must lie in [{lo}, {hi}], got {factor}")
    max_lr = report.min_loss_lr
    return max_lr / factor, max_lr
