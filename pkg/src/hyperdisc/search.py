"""Hyper-parameter search procedures built on the harness.

Weight-decay grids (cold or from a shared snapshot), momentum sweeps,
batch-size comparison at a fixed modeled budget, and the four-step recipe
that chains them: range test, batch size, momentum, weight decay.
"""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import diagnostics
from .budget import BudgetError, BudgetModel, fit_budget
from .harness import (RunConfig, RunLog, average_logs, build_objective, run_many, save_snapshot,
                      train)
from .data import split
from .netcore import ArchSpec
from .objectives import MLPObjective
from .optimizer import HyperParams, reset_state, sgd_update
from .rangetest import RangeTestError, RangeTestReport, run_range_test, suggest_bounds
from .schedules import LrPolicy, MomentumPolicy

DEFAULT_MOMENTA = (0.99, 0.97, 0.95, 0.9)
SHORT_EPOCHS = 5
EXPONENT_HALF_STEP = 10 ** 0.5

__all__ = [
    "BudgetModel", "fit_budget", "bisect_exponent", "default_wd_candidates", "WdSearchPlan",
    "wd_search", "momentum_sweep", "tbs_compare", "calibrate_budget", "run_recipe",
]


class SearchError(RuntimeError):
    pass


def bisect_exponent(w1: float, w2: float) -> float:
    """Midpoint of two values on a log10 scale (their geometric mean)."""
    if not (w1 > 0 and w2 > 0):
        raise ValueError(f"bisect_exponent needs positive values, got {w1}, {w2}")
    return 10 ** ((math.log10(w1) + math.log10(w2)) / 2)


def default_wd_candidates(prior: float | None = None) -> list[float]:
    if prior is None:
        return [1e-3, 1e-4, 1e-5, 0.0]
    if not prior > 0:
        raise ValueError(f"prior weight decay must be positive, got {prior}")
    return [prior * EXPONENT_HALF_STEP, prior, prior / EXPONENT_HALF_STEP]


@dataclass(frozen=True)
class WdSearchPlan:
    candidates: tuple[float, ...]
    mode: str = "cold_grid"
    snapshot_at: int | None = None

    def __post_init__(self):
        c = tuple(float(v) for v in self.candidates)
        object.__setattr__(self, "candidates", c)
        if not c:
            raise ValueError("no weight-decay candidates")
        if any(v < 0 for v in c):
            raise ValueError("weight-decay candidates must be nonnegative")
        if len(set(c)) != len(c) or list(c) != sorted(c, reverse=True):
            raise ValueError(f"candidates must be distinct and sorted descending, got {list(c)}")
        if self.mode not in ("cold_grid", "snapshot_restart"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if (self.mode == "snapshot_restart") != (self.snapshot_at is not None):
            raise ValueError("snapshot_at is required for snapshot_restart and only there")

    @property
    def median(self) -> float:
        return self.candidates[len(self.candidates) // 2]


@dataclass
class TrialResult:
    value: float
    log: RunLog
    score: float
    final_loss: float
    final_acc: float
    diverged: bool
    verdict: diagnostics.CurveVerdict | None = None

    def to_dict(self) -> dict:
        return {"value": self.value, "score": self.score, "final_smoothed_val_loss": self.final_loss,
                "final_acc": self.final_acc, "diverged": self.diverged,
                "verdict": self.verdict.to_dict() if self.verdict else None}


def _score(log: RunLog, metric: str = "loss") -> TrialResult:
    recs = log.eval_records()
    if log.diverged or not recs:
        return TrialResult(math.nan, log, math.inf, math.inf, 0.0, True)
    loss = diagnostics.ema([r.val_loss for r in recs])[-1]
    acc = diagnostics.ema([r.val_acc for r in recs])[-1]
    verdict = None
    vl = [r.val_loss for r in recs]
    if len(vl) >= diagnostics.default_window(len(vl)):
        verdict = diagnostics.classify_curve(vl)
    score = loss if metric == "loss" else -acc
    return TrialResult(math.nan, log, float(score), float(loss), float(acc), False, verdict)


def _short(config: RunConfig, data, epochs: int) -> RunConfig:
    obj = build_objective(config, data)
    return replace(config, epochs=epochs, max_iters=None).fit_to(obj.n_train)


def _run_trials(values, configs_per_value, data, jobs, metric) -> list[TrialResult]:
    """Train every config; a value scores by its (seed-averaged) log."""
    flat = [c for group in configs_per_value for c in group]
    logs = run_many(flat, data, jobs)
    out = []
    pos = 0
    for value, group in zip(values, configs_per_value):
        group_logs = logs[pos:pos + len(group)]
        pos += len(group)
        if any(lg.diverged for lg in group_logs):
            res = _score(next(lg for lg in group_logs if lg.diverged), metric)
        else:
            res = _score(group_logs[0] if len(group_logs) == 1 else average_logs(group_logs), metric)
        res.value = value
        out.append(res)
    return out


@dataclass
class WdSearchResult:
    best_wd: float
    trials: list[TrialResult]
    refined: TrialResult | None = None
    snapshot_at: int | None = None

    def to_dict(self) -> dict:
        return {"best_wd": self.best_wd, "snapshot_at": self.snapshot_at,
                "trials": [t.to_dict() for t in self.trials],
                "refined": self.refined.to_dict() if self.refined else None}


def wd_search(plan: WdSearchPlan, base: RunConfig, data, jobs: int = 1, refine: bool = False,
              metric: str = "loss", seeds: int = 1) -> WdSearchResult:
    """Pick the weight decay with the lowest final smoothed validation loss.

    ``cold_grid`` trains each candidate from scratch with the base config.
    ``snapshot_restart`` trains once at the median candidate up to
    ``snapshot_at`` and continues a branch per candidate from that state.
    With ``refine``, one extra run at the exponent midpoint of the two best
    candidates replaces the winner if it scores better.
    """
    obj = build_objective(base, data)
    base = base.fit_to(obj.n_train)
    values = list(plan.candidates)
    if plan.mode == "cold_grid":
        groups = [[replace(base, weight_decay=v, seed=base.seed + s) for s in range(seeds)]
                  for v in values]
        trials = _run_trials(values, groups, obj, jobs, metric)
    else:
        trials = _snapshot_branches(plan, base, obj, metric)

    ranked = sorted((t for t in trials if not t.diverged), key=lambda t: t.score)
    if not ranked:
        raise SearchError("every weight-decay candidate diverged")
    result = WdSearchResult(ranked[0].value, trials, snapshot_at=plan.snapshot_at)
    if refine and len(ranked) >= 2 and ranked[0].value > 0 and ranked[1].value > 0:
        mid = bisect_exponent(ranked[0].value, ranked[1].value)
        [extra] = _run_trials([mid], [[replace(base, weight_decay=mid, seed=base.seed + s)
                                        for s in range(seeds)]], obj, 1, metric)
        result.refined = extra
        if not extra.diverged and extra.score < ranked[0].score:
            result.best_wd = mid
    return result


def _snapshot_branches(plan: WdSearchPlan, base: RunConfig, obj, metric) -> list[TrialResult]:
    stem_cfg = replace(base, weight_decay=plan.median)
    stem = train(stem_cfg, obj, stop_after=plan.snapshot_at - 1)
    if stem.diverged:
        raise SearchError(f"snapshot run at weight decay {plan.median} diverged")
    snap = save_snapshot(stem.state, stem_cfg)
    out = []
    for v in plan.candidates:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            log = train(replace(base, weight_decay=v), obj, resume=snap)
        log.state = None
        res = _score(log, metric)
        res.value = v
        out.append(res)
    return out


def plateau_iteration(log: RunLog, window: int | None = None, tol: float = diagnostics.DEFAULT_TOL,
                      min_fraction: float = 0.1) -> int | None:
    """First iteration whose validation-loss history classifies as balanced."""
    recs = log.eval_records()
    vl = [r.val_loss for r in recs]
    start = max(int(min_fraction * len(vl)), window or 10)
    for k in range(start, len(vl) + 1):
        w = window or diagnostics.default_window(k)
        if k >= w and diagnostics.classify_curve(vl[:k], window=w, tol=tol).kind == "balanced":
            return recs[k - 1].iter + 1
    return None


def default_snapshot_point(plan_candidates: Sequence[float], base: RunConfig, data) -> int:
    """Snapshot once the median-candidate run plateaus, else at half the run."""
    cands = sorted(plan_candidates, reverse=True)
    obj = build_objective(base, data)
    base = base.fit_to(obj.n_train)
    log = train(replace(base, weight_decay=cands[len(cands) // 2]), obj)
    total = base.total_iters(obj.n_train)
    at = plateau_iteration(log)
    if at is None or at >= total:
        return total // 2
    return at


@dataclass
class MomentumSweepResult:
    best_momentum: float
    trials: list[TrialResult]
    tie: bool
    excluded: list[float]
    recommended: MomentumPolicy | None = None

    def to_dict(self) -> dict:
        rec = self.recommended
        return {"best_momentum": self.best_momentum, "tie": self.tie, "excluded": self.excluded,
                "recommended": rec.to_dict() if rec else None,
                "trials": [t.to_dict() for t in self.trials]}


def momentum_sweep(values: Sequence[float] = DEFAULT_MOMENTA, base: RunConfig | None = None,
                   data=None, epochs: int = SHORT_EPOCHS, jobs: int = 1, metric: str = "loss",
                   tie_tol: float = 1e-3, lower: float = 0.85) -> MomentumSweepResult:
    """Short constant-momentum runs; diverged values are excluded and listed.

    Values scoring within ``tie_tol`` of the best count as tied, and the
    smallest of them wins. The recommended cyclic policy starts at the best
    value and falls to ``lower`` while the LR rises.
    """
    values = list(values)
    if not values:
        raise ValueError("no momentum values to sweep")
    if any(not 0 <= v < 1 for v in values):
        raise ValueError("momentum values must lie in [0, 1)")
    if base is None:
        raise ValueError("momentum_sweep needs a base config")
    obj = build_objective(base, data)
    short = _short(base, obj, epochs)
    groups = [[replace(short, momentum_policy=MomentumPolicy.constant(v))] for v in values]
    trials = _run_trials(values, groups, obj, jobs, metric)
    alive = [t for t in trials if not t.diverged]
    excluded = [t.value for t in trials if t.diverged]
    if not alive:
        raise SearchError("every momentum value diverged")
    best_score = min(t.score for t in alive)
    tied = [t.value for t in alive if t.score - best_score <= tie_tol]
    best = min(tied)
    ss = short.lr_policy.stepsize_iters or max(1, short.lr_policy.total_iters // 2)
    rec = MomentumPolicy.one_cycle_inverse(best, min(lower, best), ss)
    return MomentumSweepResult(best, trials, len(tied) > 1, excluded, rec)


@dataclass
class TbsResult:
    tbs: int
    iters: int
    lr_bounds: tuple[float, float]
    modeled_cost: float
    result: TrialResult
    range_test: RangeTestReport | None = None

    def to_dict(self) -> dict:
        return {"tbs": self.tbs, "iters": self.iters, "lr_bounds": list(self.lr_bounds),
                "modeled_cost": self.modeled_cost, **self.result.to_dict()}


@dataclass
class TbsComparison:
    runs: list[TbsResult]
    by_loss: list[int]
    by_acc: list[int]

    def best(self, metric: str = "loss") -> TbsResult:
        order = self.by_loss if metric == "loss" else self.by_acc
        return next(r for r in self.runs if r.tbs == order[0])

    def to_dict(self) -> dict:
        return {"by_loss": self.by_loss, "by_acc": self.by_acc, "runs": [r.to_dict() for r in self.runs]}


def budget_iterations(sizes: Sequence[int], model: BudgetModel) -> dict[int, int]:
    return {s: model.iterations(s) for s in sizes}


def tbs_compare(sizes: Sequence[int], model: BudgetModel, base: RunConfig, data,
                lr_for_size: Callable[[int], tuple[float, float]] | dict | None = None,
                range_lr: tuple[float, float] = (1e-3, 3.0), range_epochs: int = 2,
                jobs: int = 1) -> TbsComparison:
    """Train each batch size for as many iterations as the budget allows.

    Each size trains under a 1cycle policy whose bounds come from
    ``lr_for_size`` or, by default, from its own range test.
    """
    iters = budget_iterations(sizes, model)
    obj = build_objective(base, data)
    bounds, reports = {}, {}
    for s in sizes:
        if callable(lr_for_size):
            bounds[s] = tuple(lr_for_size(s))
        elif lr_for_size is not None:
            bounds[s] = tuple(lr_for_size[s])
        else:
            probe = replace(base, tbs=s, epochs=range_epochs, max_iters=None)
            rep = run_range_test(probe, obj, *range_lr)
            reports[s] = rep
            bounds[s] = suggest_bounds(rep, "one_cycle")
    configs = []
    for s in sizes:
        n = iters[s]
        lo, hi = bounds[s]
        lr = LrPolicy.one_cycle(lo, hi, max(1, int(0.45 * n)), n)
        mp = base.momentum_policy
        if mp.kind != "constant":
            mp = replace(mp, stepsize_iters=lr.stepsize_iters)
        configs.append(replace(base, tbs=s, max_iters=n, lr_policy=lr, momentum_policy=mp,
                               cost_per_iter=model.a, cost_per_sample=model.b))
    logs = run_many(configs, obj, jobs)
    runs = []
    for s, cfg, lg in zip(sizes, configs, logs):
        res = _score(lg)
        res.value = s
        runs.append(TbsResult(s, iters[s], bounds[s], iters[s] * model.cost(s), res, reports.get(s)))
    alive = [r for r in runs if not r.result.diverged]
    by_loss = [r.tbs for r in sorted(alive, key=lambda r: r.result.final_loss)]
    by_acc = [r.tbs for r in sorted(alive, key=lambda r: -r.result.final_acc)]
    return TbsComparison(runs, by_loss, by_acc)


def measure_iteration_time(objective, tbs: int, probe_iters: int,
                           timer: Callable[[], float] = time.perf_counter) -> float:
    """Median wall time of one forward/backward/update step at ``tbs``."""
    params = np.asarray(objective.init_params("fan_in_scaled_normal", 0), dtype=np.float64)
    state = reset_state(params)
    hp = HyperParams(1e-3, 0.9, 0.0)
    rng = np.random.default_rng(0)
    times = []
    for _ in range(probe_iters):
        idx = rng.choice(objective.n_train, size=tbs, replace=tbs > objective.n_train)
        t0 = timer()
        _, g = objective.loss_and_grad(params, objective.batch(idx))
        params, state = sgd_update(params, g, hp, state)
        times.append(timer() - t0)
    return float(np.median(times))


def calibrate_budget(data, arch: ArchSpec, probe_iters: int = 20, sizes: Sequence[int] = (64, 256),
                     budget: float = math.inf, timer=time.perf_counter) -> BudgetModel:
    """Fit t(TBS) = a + b*TBS from measured step times at two batch sizes."""
    if probe_iters < 10:
        raise ValueError(f"probe_iters must be at least 10, got {probe_iters}")
    train_set, val_set = split(data, 0.2, 0)
    obj = MLPObjective(arch, train_set, val_set)
    times = [measure_iteration_time(obj, s, probe_iters, timer) for s in sizes]
    return fit_budget(sizes, times, budget)


@dataclass
class RecipeReport:
    lr_bounds: tuple[float, float] | None = None
    tbs: int | None = None
    momentum_bounds: tuple[float, float] | None = None
    weight_decay: float | None = None
    evidence: dict = field(default_factory=dict)
    confirmation: RunLog | None = None
    config: RunConfig | None = None
    failed_step: int | None = None
    error: str | None = None

    @property
    def complete(self) -> bool:
        return self.failed_step is None and self.confirmation is not None

    def to_dict(self) -> dict:
        ev = {}
        for k, v in self.evidence.items():
            ev[k] = v.to_dict() if hasattr(v, "to_dict") else v.summary() if hasattr(v, "summary") else v
        conf = self.confirmation
        return {
            "lr_bounds": list(self.lr_bounds) if self.lr_bounds else None,
            "tbs": self.tbs,
            "momentum_bounds": list(self.momentum_bounds) if self.momentum_bounds else None,
            "weight_decay": self.weight_decay,
            "failed_step": self.failed_step, "error": self.error,
            "confirmation": None if conf is None else {
                "final_acc": conf.final_acc, "diverged": conf.diverged,
                "records": len(conf.records), "config_hash": conf.config_hash},
            "evidence": ev,
        }


def one_cycle_config(base: RunConfig, n_train: int, lr_bounds, momentum_bounds, weight_decay,
                     tbs: int | None = None, epochs: int | None = None,
                     cycle_fraction: float = 0.9) -> RunConfig:
    """1cycle LR with opposing cyclic momentum; the cycle covers ``cycle_fraction`` of the run."""
    cfg = replace(base, tbs=tbs or base.tbs, epochs=epochs or base.epochs, max_iters=None,
                  weight_decay=weight_decay)
    total = cfg.total_iters(n_train)
    ss = max(1, int(cycle_fraction * total / 2))
    lo, hi = lr_bounds
    m_lo, m_hi = momentum_bounds
    return replace(cfg, lr_policy=LrPolicy.one_cycle(lo, hi, ss, total),
                   momentum_policy=MomentumPolicy.one_cycle_inverse(m_hi, m_lo, ss))


def run_recipe(data, arch: ArchSpec, budget: BudgetModel, base: RunConfig | None = None,
               range_lr: tuple[float, float] = (1e-3, 3.0), range_epochs: int = 2,
               tbs_sizes: Sequence[int] | None = None, momenta: Sequence[float] = DEFAULT_MOMENTA,
               wd_candidates: Sequence[float] | None = None, short_epochs: int = SHORT_EPOCHS,
               confirm_epochs: int | None = None, metric: str = "loss", jobs: int = 1,
               min_momentum: float = 0.85) -> RecipeReport:
    """Range test, batch size, momentum, weight decay, then one confirming 1cycle run.

    A failing step stops the pipeline; the report keeps what was found so
    far and names the step.
    """
    if base is None:
        total = 1
        base = RunConfig(arch, LrPolicy.constant(0.01, total), MomentumPolicy.constant(0.9),
                         tbs=128, epochs=short_epochs)
    base = replace(base, arch=arch)
    obj = build_objective(base, data)
    n = obj.n_train
    report = RecipeReport()
    step = 1
    try:
        # 1: range test with cyclic momentum falling as the LR ramps
        probe = replace(base, epochs=range_epochs, max_iters=None)
        ramp_iters = probe.total_iters(n)
        probe = replace(probe, momentum_policy=MomentumPolicy.one_cycle_inverse(0.95, min_momentum,
                                                                               ramp_iters))
        rt = run_range_test(probe, obj, *range_lr)
        report.evidence["range_test"] = rt
        report.lr_bounds = suggest_bounds(rt, "one_cycle")

        # 2: batch size at a fixed modeled budget
        step = 2
        if tbs_sizes is None:
            tbs_sizes = [s for s in (base.tbs, 2 * base.tbs, 4 * base.tbs) if s <= n // 4] or [base.tbs]
        tbs_base = replace(base, momentum_policy=MomentumPolicy.one_cycle_inverse(0.95, min_momentum, 1))
        cmp_ = tbs_compare(tbs_sizes, budget, tbs_base, obj, range_lr=range_lr,
                           range_epochs=range_epochs, jobs=jobs)
        report.evidence["tbs_compare"] = cmp_
        if not cmp_.by_loss:
            raise SearchError("every batch size diverged")
        chosen = cmp_.best(metric)
        report.tbs = chosen.tbs
        report.lr_bounds = chosen.lr_bounds

        # 3: momentum sweep at the chosen batch size and LR range
        step = 3
        sweep_base = one_cycle_config(base, n, report.lr_bounds, (0.9, 0.9), 0.0, tbs=report.tbs,
                                      epochs=short_epochs)
        ms = momentum_sweep(momenta, sweep_base, obj, epochs=short_epochs, jobs=jobs, metric=metric)
        report.evidence["momentum_sweep"] = ms
        report.momentum_bounds = (min(min_momentum, ms.best_momentum), ms.best_momentum)

        # 4: weight-decay grid under the full cyclic setup
        step = 4
        cands = sorted(wd_candidates if wd_candidates is not None else default_wd_candidates(),
                       reverse=True)
        wd_base = one_cycle_config(base, n, report.lr_bounds, report.momentum_bounds, 0.0,
                                   tbs=report.tbs, epochs=short_epochs)
        ws = wd_search(WdSearchPlan(tuple(cands)), wd_base, obj, jobs=jobs, metric=metric)
        report.evidence["wd_search"] = ws
        report.weight_decay = ws.best_wd

        step = 5
        final = one_cycle_config(base, n, report.lr_bounds, report.momentum_bounds,
                                 report.weight_decay, tbs=report.tbs,
                                 epochs=confirm_epochs or base.epochs)
        report.config = final
        log = train(final, obj)
        log.state = None
        report.confirmation = log
        if log.diverged:
            raise SearchError("confirmation run diverged")
    except (SearchError, RangeTestError, BudgetError, ValueError) as e:
        report.failed_step = step
        report.error = f"{type(e).__name__}: {e}"
    return report
