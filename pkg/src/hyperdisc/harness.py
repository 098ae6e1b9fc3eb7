"""Training loop, run logs, snapshots and four-run averaging."""
from __future__ import annotations

import csv
import hashlib
import json
import math
import struct
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from . import schedules
from .data import BatchPlan, Dataset, batch_indices, split
from .netcore import ArchSpec
from .objectives import MLPObjective
from .optimizer import DivergenceError, HyperParams, OptimizerState, sgd_update
from .schedules import LrPolicy, MomentumPolicy

CSV_COLUMNS = ("iter", "epoch", "lr", "momentum", "train_loss", "val_loss", "val_acc", "modeled_time")
SNAPSHOT_MAGIC = b"HDSN"
SNAPSHOT_VERSION = 1
EMA_BETA = 0.95


class ConfigError(ValueError):
    pass


class SnapshotError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    arch: ArchSpec
    lr_policy: LrPolicy
    momentum_policy: MomentumPolicy
    weight_decay: float = 0.0
    tbs: int = 128
    epochs: int = 1
    seed: int = 0
    init_scheme: str = "fan_in_scaled_normal"
    eval_interval_iters: int = 1
    dataset: str = ""
    val_fraction: float = 0.2
    split_seed: int = 0
    # budgeted runs stop after this many iterations instead of whole epochs
    max_iters: int | None = None
    cost_per_iter: float = 0.0
    cost_per_sample: float = 1.0
    divergence_factor: float = 4.0

    def iters_per_epoch(self, n_train: int) -> int:
        return -(-n_train // self.tbs)

    def total_iters(self, n_train: int) -> int:
        if self.max_iters is not None:
            return self.max_iters
        return self.epochs * self.iters_per_epoch(n_train)

    def iter_cost(self) -> float:
        return self.cost_per_iter + self.cost_per_sample * self.tbs

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["arch"] = self.arch.to_dict()
        d["lr_policy"] = self.lr_policy.to_dict()
        d["momentum_policy"] = self.momentum_policy.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        d["arch"] = ArchSpec(tuple(d["arch"]["layer_sizes"]), d["arch"]["activation"])
        d["lr_policy"] = LrPolicy(**d["lr_policy"])
        d["momentum_policy"] = MomentumPolicy(**d["momentum_policy"])
        return cls(**d)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=repr)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def fit_to(self, n_train: int) -> "RunConfig":
        """Stretch both policies so they span exactly this run's iterations."""
        total = self.total_iters(n_train)
        old = self.lr_policy.total_iters
        return replace(self,
                       lr_policy=schedules.rescale(self.lr_policy, total, old),
                       momentum_policy=schedules.rescale(self.momentum_policy, total, old))

    def violations(self, n_train: int | None = None) -> list[str]:
        out = schedules.validate_policy(self.lr_policy) + schedules.validate_policy(self.momentum_policy)
        if self.tbs < 1:
            out.append(f"tbs must be positive, got {self.tbs}")
        if self.epochs < 1:
            out.append(f"epochs must be positive, got {self.epochs}")
        if self.eval_interval_iters < 1:
            out.append(f"eval_interval_iters must be positive, got {self.eval_interval_iters}")
        if self.weight_decay < 0 or not math.isfinite(self.weight_decay):
            out.append(f"weight_decay must be nonnegative, got {self.weight_decay}")
        if n_train is not None:
            if self.tbs > n_train:
                out.append(f"tbs {self.tbs} exceeds training set size {n_train}")
            total = self.total_iters(n_train)
            if self.lr_policy.total_iters != total:
                out.append(
                    f"lr policy spans {self.lr_policy.total_iters} iterations but the run has {total}"
                )
        return out


class Record(NamedTuple):
    iter: int
    epoch: int
    lr: float
    momentum: float
    train_loss: float
    val_loss: float
    val_acc: float
    modeled_time: float


@dataclass
class TrainState:
    """Everything needed to continue a run after ``next_iter - 1``."""
    params: np.ndarray
    opt: OptimizerState
    next_iter: int
    shuffle_seed: int
    ema: float | None
    best_ema: float | None
    last_val: tuple[float, float]
    start_loss: float | None = None


@dataclass
class RunLog:
    records: list[Record]
    final_acc: float
    diverged: bool
    config_hash: str
    halt_iter: int | None = None
    halt_lr: float | None = None
    # val columns hold the latest evaluation; this marks rows where it was taken
    evaluated: list[bool] = field(default_factory=list)
    state: TrainState | None = field(default=None, repr=False, compare=False)

    def column(self, name: str) -> np.ndarray:
        i = CSV_COLUMNS.index(name)
        return np.array([r[i] for r in self.records], dtype=np.float64)

    def eval_records(self) -> list[Record]:
        if not self.evaluated:
            return list(self.records)
        return [r for r, e in zip(self.records, self.evaluated) if e]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(CSV_COLUMNS)
            for r in self.records:
                w.writerow([r.iter, r.epoch] + [repr(float(v)) for v in r[2:]])

    @classmethod
    def from_csv(cls, path) -> "RunLog":
        with open(path, newline="") as f:
            reader = csv.reader(f)
            header = tuple(next(reader))
            if header != CSV_COLUMNS:
                raise ValueError(f"{path}: expected columns {','.join(CSV_COLUMNS)}")
            records = [Record(int(r[0]), int(r[1]), *map(float, r[2:])) for r in reader if r]
        final = records[-1].val_acc if records else 0.0
        return cls(records, final, False, "")


def _ema(prev: float | None, x: float, beta: float = EMA_BETA) -> float:
    return x if prev is None else prev + (1.0 - beta) * (x - prev)


def build_objective(config: RunConfig, data):
    """Accept a Dataset (split per config), a (train, val) pair, or an objective."""
    if isinstance(data, Dataset):
        train_set, val_set = split(data, config.val_fraction, config.split_seed)
        return MLPObjective(config.arch, train_set, val_set)
    if isinstance(data, tuple) and len(data) == 2:
        return MLPObjective(config.arch, *data)
    if data is None:
        raise ConfigError("no dataset given")
    return data


def fit_config(config: RunConfig, data) -> RunConfig:
    """Return ``config`` with its policies stretched to the run length on ``data``."""
    return config.fit_to(build_objective(config, data).n_train)


def train(config: RunConfig, data, resume: "Snapshot | None" = None,
          stop_after: int | None = None) -> RunLog:
    """Run SGD under the config's schedules and return the per-iteration log.

    Every iteration produces one record. Validation runs every
    ``eval_interval_iters`` iterations and at the last one; in between, the
    val columns repeat the latest evaluation. The run halts with
    ``diverged=True`` on non-finite values or when the smoothed training loss
    exceeds ``divergence_factor`` times the larger of its best and its
    starting value. ``stop_after`` ends
    the run after that iteration and leaves the resumable state on the log.
    """
    obj = build_objective(config, data)
    problems = config.violations(obj.n_train)
    if problems:
        raise ConfigError("; ".join(problems))

    total = config.total_iters(obj.n_train)
    ipe = config.iters_per_epoch(obj.n_train)
    chash = config.hash()
    if resume is not None:
        state = resume.to_state()
        if resume.config_hash != chash:
            warnings.warn(
                f"resuming snapshot from config {resume.config_hash} under config {chash}",
                stacklevel=2,
            )
        if state.params.size != np.asarray(obj.init_params(config.init_scheme, config.seed)).size:
            raise SnapshotError("snapshot parameter count does not match the configured network")
    else:
        params = np.asarray(obj.init_params(config.init_scheme, config.seed), dtype=np.float64)
        state = TrainState(params, OptimizerState(np.zeros_like(params), 0), 0, config.seed,
                           None, None, obj.evaluate(params))

    plan = BatchPlan(config.tbs, state.shuffle_seed)
    params, opt = state.params, state.opt
    ema, best, last_val = state.ema, state.best_ema, state.last_val
    start_loss = state.start_loss
    cost = config.iter_cost()
    records: list[Record] = []
    evaluated: list[bool] = []
    diverged = False
    halt_iter = halt_lr = None
    epoch_batches: tuple[int, list] = (-1, [])
    end = total if stop_after is None else min(total, stop_after + 1)
    it = state.next_iter

    while it < end:
        epoch, pos = divmod(it, ipe)
        if epoch_batches[0] != epoch:
            epoch_batches = (epoch, batch_indices(obj.n_train, plan, epoch))
        lr = schedules.lr_at(config.lr_policy, it)
        mom = schedules.momentum_at(config.momentum_policy, it)
        loss, grad = obj.loss_and_grad(params, obj.batch(epoch_batches[1][pos]))
        if not math.isfinite(loss):
            diverged, halt_iter, halt_lr = True, it, lr
            break
        try:
            params, opt = sgd_update(params, grad, HyperParams(lr, mom, config.weight_decay), opt)
        except DivergenceError:
            diverged, halt_iter, halt_lr = True, it, lr
            break
        ema = _ema(ema, loss)
        if start_loss is None:
            start_loss = ema
        best = ema if best is None else min(best, ema)
        # measured against the starting loss too: transient spikes in cyclic
        # runs that start from a near-zero best are not divergence
        blown = ema > config.divergence_factor * max(best, start_loss)
        due = (it + 1) % config.eval_interval_iters == 0 or it == total - 1 or blown
        if due:
            val = obj.evaluate(params)
            if not (math.isfinite(val[0]) and math.isfinite(val[1])):
                diverged, halt_iter, halt_lr = True, it, lr
                break
            last_val = val
        records.append(Record(it, epoch, lr, mom, loss, last_val[0], last_val[1], (it + 1) * cost))
        evaluated.append(due)
        it += 1
        if blown:
            diverged, halt_iter, halt_lr = True, it - 1, lr
            break

    final_acc = records[-1].val_acc if records else last_val[1]
    out_state = TrainState(params, opt, it, state.shuffle_seed, ema, best, last_val, start_loss)
    return RunLog(records, final_acc, diverged, chash, halt_iter, halt_lr, evaluated, out_state)


@dataclass(frozen=True)
class Snapshot:
    version: int
    iter: int
    params: np.ndarray = field(repr=False)
    velocity: np.ndarray = field(repr=False)
    opt_iter: int
    rng_state: dict
    config_hash: str
    loop_state: dict

    def to_state(self) -> TrainState:
        ls = self.loop_state

        def f(x):
            return None if x is None else float.fromhex(x)

        return TrainState(self.params.copy(), OptimizerState(self.velocity.copy(), self.opt_iter),
                          self.iter, int(self.rng_state["shuffle_seed"]), f(ls["ema"]),
                          f(ls["best_ema"]), (f(ls["val_loss"]), f(ls["val_acc"])),
                          f(ls["start_loss"]))


def save_snapshot(state: TrainState, config: RunConfig, path=None) -> Snapshot:
    """Capture a resumable state; also writes it to ``path`` when given.

    The shuffle order is keyed by (shuffle_seed, epoch), so the RNG state is
    that key plus the position inside the epoch.
    """
    def h(x):
        return None if x is None else float(x).hex()

    n = state.next_iter
    snap = Snapshot(
        SNAPSHOT_VERSION, n, np.array(state.params, dtype=np.float64),
        np.array(state.opt.velocity, dtype=np.float64), state.opt.iter,
        {"shuffle_seed": state.shuffle_seed, "next_iter": n},
        config.hash(),
        {"ema": h(state.ema), "best_ema": h(state.best_ema),
         "val_loss": h(state.last_val[0]), "val_acc": h(state.last_val[1]),
         "start_loss": h(state.start_loss)},
    )
    if path is not None:
        write_snapshot(snap, path)
    return snap


def write_snapshot(snap: Snapshot, path) -> None:
    header = json.dumps({
        "iter": snap.iter, "opt_iter": snap.opt_iter, "n_params": int(snap.params.size),
        "rng_state": snap.rng_state, "config_hash": snap.config_hash, "loop_state": snap.loop_state,
    }, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(SNAPSHOT_MAGIC)
        f.write(struct.pack("<HI", snap.version, len(header)))
        f.write(header)
        f.write(snap.params.astype("<f8").tobytes())
        f.write(snap.velocity.astype("<f8").tobytes())


def load_snapshot(path) -> Snapshot:
    raw = Path(path).read_bytes()
    if raw[:4] != SNAPSHOT_MAGIC:
        raise SnapshotError(f"{path}: not a snapshot file")
    version, hlen = struct.unpack("<HI", raw[4:10])
    if version != SNAPSHOT_VERSION:
        raise SnapshotError(f"{path}: snapshot version {version}, this build reads {SNAPSHOT_VERSION}")
    header = json.loads(raw[10:10 + hlen])
    n = header["n_params"]
    body = raw[10 + hlen:]
    if len(body) != 16 * n:
        raise SnapshotError(f"{path}: expected {16 * n} bytes of state, got {len(body)}")
    params = np.frombuffer(body[:8 * n], dtype="<f8").astype(np.float64)
    velocity = np.frombuffer(body[8 * n:], dtype="<f8").astype(np.float64)
    return Snapshot(version, header["iter"], params, velocity, header["opt_iter"],
                    header["rng_state"], header["config_hash"], header["loop_state"])


def _train_job(args):
    config, data = args
    log = train(config, data)
    log.state = None
    return log


def run_many(configs: Sequence[RunConfig], data, jobs: int = 1) -> list[RunLog]:
    """Train independent configs, optionally in worker processes."""
    if jobs <= 1 or len(configs) <= 1:
        return [_train_job((c, data)) for c in configs]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_train_job, [(c, data) for c in configs]))


FOUR_RUN_OFFSETS = (0, 1, 6, 11)


def four_run_configs(base: RunConfig, n_train: int) -> list[RunConfig]:
    """Four variants of ``base``: batch sizes in [tbs, tbs+12] (two even, two
    odd), alternating the two init schemes, distinct seeds."""
    schemes = ("fan_in_scaled_normal", "fan_avg_uniform")
    out = []
    for k, off in enumerate(FOUR_RUN_OFFSETS):
        cfg = replace(base, tbs=base.tbs + off, init_scheme=schemes[k % 2], seed=base.seed + k)
        out.append(cfg.fit_to(n_train))
    return out


def average_logs(logs: Sequence[RunLog], tolerance: float = 0.25) -> RunLog:
    """Pointwise mean of several logs aligned by fractional progress.

    Runs of different length are resampled onto the shortest run's grid of
    (iter+1)/n_records by linear interpolation.
    """
    if not logs:
        raise ValueError("nothing to average")
    lengths = [len(lg.records) for lg in logs]
    if min(lengths) == 0:
        raise ValueError("cannot average an empty run")
    if (max(lengths) - min(lengths)) > tolerance * min(lengths):
        raise ValueError(f"run lengths {lengths} differ beyond alignment tolerance {tolerance:.0%}")
    ref = logs[int(np.argmin(lengths))]
    grid = (np.arange(1, len(ref.records) + 1)) / len(ref.records)
    cols = {}
    for name in CSV_COLUMNS[2:]:
        series = []
        for lg in logs:
            y = lg.column(name)
            frac = np.arange(1, len(y) + 1) / len(y)
            series.append(np.interp(grid, frac, y))
        cols[name] = np.mean(series, axis=0)
    records = [
        Record(r.iter, r.epoch, *(float(cols[c][i]) for c in CSV_COLUMNS[2:]))
        for i, r in enumerate(ref.records)
    ]
    return RunLog(records, float(np.mean([lg.final_acc for lg in logs])),
                  any(lg.diverged for lg in logs), "+".join(lg.config_hash for lg in logs))


def average_runs(configs: Sequence[RunConfig], data, jobs: int = 1) -> RunLog:
    return average_logs(run_many(configs, data, jobs))
