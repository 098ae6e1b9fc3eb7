"""Command-line front end: INI configs, run directories, reports and SVG plots."""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import os
import re
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import diagnostics, search
from .budget import BudgetError, BudgetModel
from .data import DataError, Dataset, gen_synthetic, load_csv, load_mnist
from .harness import (ConfigError, RunConfig, SnapshotError, build_objective, load_snapshot,
                      save_snapshot, train)
from .netcore import ArchSpec, SpecError
from .rangetest import RangeTestError, run_range_test
from .schedules import LrPolicy, MomentumPolicy, PolicyError

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2
SECTIONS = ("arch", "data", "train", "policies", "search")

_NUM = r"(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?"
_RANGE = re.compile(rf"^\s*({_NUM})\s*-\s*({_NUM})\s*(?:/\s*({_NUM})\s*)?$")
_SINGLE = re.compile(rf"^\s*({_NUM})\s*$")

# canonical defaults; every key a config may hold appears here
DEFAULTS = {
    "arch": {"layers": "2,64,64,2", "activation": "relu"},
    "data": {"source": "synthetic", "kind": "two_spirals", "n": "5000", "noise": "0.1",
             "seed": "0", "class_count": "", "turns": "1.5", "path": "", "split": "train",
             "val_fraction": "0.2", "split_seed": "0"},
    "train": {"tbs": "128", "epochs": "10", "seed": "0", "weight_decay": "0.0",
              "init_scheme": "fan_in_scaled_normal", "eval_interval_iters": "0",
              "max_iters": "", "divergence_factor": "4.0"},
    "policies": {"lr": "0.01", "lr_kind": "", "step_epochs": "", "drop_factor": "0.1",
                 "annihilation_factor": "1000.0", "momentum": "0.9", "momentum_kind": ""},
    "search": {"range_lr": "0.001-3.0", "range_epochs": "2", "wd_candidates": "0.001,0.0001,1e-05,0.0",
               "wd_mode": "cold_grid", "snapshot_at": "", "refine": "false", "seeds": "1",
               "momenta": "0.9,0.95,0.97,0.99", "min_momentum": "0.85", "short_epochs": "5",
               "tbs_sizes": "", "budget": "", "cost_per_iter": "0.0", "cost_per_sample": "1.0",
               "confirm_epochs": ""},
}


class Shorthand(NamedTuple):
    min: float
    max: float
    ss_epochs: float | None

    @property
    def constant(self) -> bool:
        return self.ss_epochs is None and self.min == self.max


def parse_schedule_shorthand(text: str, require_ss: bool = True) -> Shorthand:
    """Parse ``"min-max/SS"`` (SS in epochs) or a single constant value.

    ``"0.08-0.8/41"`` gives ``(0.08, 0.8, 41)``; ``"0.1"`` gives ``(0.1, 0.1, None)``.
    Bounds must be ascending; the policy kind decides the direction of travel.
    """
    m = _SINGLE.match(text)
    if m:
        v = float(m.group(1))
        return Shorthand(v, v, None)
    m = _RANGE.match(text)
    if not m:
        raise ConfigError(f"malformed schedule {text!r}; expected 'min-max/SS' or a number")
    lo, hi = float(m.group(1)), float(m.group(2))
    ss = float(m.group(3)) if m.group(3) is not None else None
    if lo > hi:
        raise ConfigError(f"schedule {text!r} has min > max")
    if ss is None and require_ss:
        raise ConfigError(f"schedule {text!r} is missing the '/SS' stepsize")
    if ss is not None and ss <= 0:
        raise ConfigError(f"schedule {text!r} needs a positive stepsize")
    return Shorthand(lo, hi, ss)


def format_shorthand(s: Shorthand) -> str:
    if s.ss_epochs is None:
        return repr(s.min) if s.min == s.max else f"{s.min!r}-{s.max!r}"
    ss = int(s.ss_epochs) if float(s.ss_epochs).is_integer() else s.ss_epochs
    return f"{s.min!r}-{s.max!r}/{ss}"


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _canonical_value(section: str, key: str, value: str) -> str:
    v = value.strip()
    if v == "":
        return ""
    try:
        if key in ("lr", "momentum"):
            return format_shorthand(parse_schedule_shorthand(v, require_ss=False))
        if key == "range_lr":
            return format_shorthand(parse_schedule_shorthand(v, require_ss=False))
        if key in ("layers", "tbs_sizes"):
            return ",".join(str(x) for x in _ints(v))
        if key in ("wd_candidates", "momenta"):
            return ",".join(repr(x) for x in _floats(v))
        if key == "refine":
            return "true" if v.lower() in ("1", "true", "yes", "on") else "false"
        default = DEFAULTS[section][key]
        if default and re.fullmatch(r"-?\d+", default):
            return str(int(v))
        if default and re.fullmatch(_NUM, default):
            return repr(float(v))
    except ValueError as e:
        raise ConfigError(f"[{section}] {key} = {value!r}: {e}") from None
    return v


@dataclass
class ConfigFile:
    """Sectioned key/value settings in canonical string form."""
    sections: dict

    @classmethod
    def from_text(cls, text: str) -> "ConfigFile":
        cp = configparser.ConfigParser(interpolation=None)
        try:
            cp.read_string(text)
        except configparser.Error as e:
            raise ConfigError(f"malformed config: {e}") from None
        unknown = [s for s in cp.sections() if s not in SECTIONS]
        if unknown:
            raise ConfigError(f"unknown config sections {unknown}; expected {list(SECTIONS)}")
        out = {s: dict(DEFAULTS[s]) for s in SECTIONS}
        for s in cp.sections():
            for k, v in cp.items(s):
                if k not in DEFAULTS[s]:
                    raise ConfigError(f"unknown key {k!r} in [{s}]")
                out[s][k] = v
        return cls({s: {k: _canonical_value(s, k, v) for k, v in out[s].items()} for s in SECTIONS})

    @classmethod
    def load(cls, path) -> "ConfigFile":
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        return cls.from_text(text)

    @classmethod
    def default(cls) -> "ConfigFile":
        return cls.from_text("")

    def to_text(self) -> str:
        buf = io.StringIO()
        for s in SECTIONS:
            buf.write(f"[{s}]\n")
            for k in sorted(self.sections[s]):
                buf.write(f"{k} = {self.sections[s][k]}\n")
            buf.write("\n")
        return buf.getvalue()

    def get(self, section: str, key: str) -> str:
        return self.sections[section][key]

    def with_values(self, section: str, **kv) -> "ConfigFile":
        new = {s: dict(v) for s, v in self.sections.items()}
        for k, v in kv.items():
            if k not in DEFAULTS[section]:
                raise ConfigError(f"unknown key {k!r} in [{section}]")
            new[section][k] = _canonical_value(section, k, str(v))
        return ConfigFile(new)

    def arch(self) -> ArchSpec:
        return ArchSpec(tuple(_ints(self.get("arch", "layers"))), self.get("arch", "activation"))

    def dataset(self) -> Dataset:
        d = self.sections["data"]
        src = d["source"]
        if src == "synthetic":
            k = int(d["class_count"]) if d["class_count"] else None
            return gen_synthetic(d["kind"], int(d["n"]), float(d["noise"]), int(d["seed"]),
                                 class_count=k, turns=float(d["turns"]))
        if src == "csv":
            if not d["path"]:
                raise ConfigError("[data] source = csv needs a path")
            return load_csv(d["path"])
        if src == "mnist":
            return load_mnist(d["path"] or None, d["split"])
        raise ConfigError(f"unknown data source {src!r}; expected synthetic, csv or mnist")

    def run_config(self, n_train: int) -> RunConfig:
        """Build the RunConfig; stepsizes in epochs become iterations here."""
        t, p, d = self.sections["train"], self.sections["policies"], self.sections["data"]
        tbs, epochs = int(t["tbs"]), int(t["epochs"])
        if tbs < 1 or epochs < 1:
            raise ConfigError(f"tbs and epochs must be positive, got tbs={tbs} epochs={epochs}")
        ipe = -(-n_train // tbs)
        max_iters = int(t["max_iters"]) if t["max_iters"] else None
        total = max_iters if max_iters is not None else epochs * ipe
        lr = parse_schedule_shorthand(p["lr"], require_ss=False)
        kind = p["lr_kind"] or ("constant" if lr.constant else "one_cycle")

        def iters(ss_epochs):
            return max(1, int(round(ss_epochs * ipe)))

        if kind == "constant":
            lr_policy = LrPolicy.constant(lr.max, total)
        elif kind == "step":
            every = iters(float(p["step_epochs"])) if p["step_epochs"] else max(1, total // 2)
            lr_policy = LrPolicy.step(lr.max, every, total, float(p["drop_factor"]))
        elif kind in ("one_cycle", "triangular_clr"):
            if lr.ss_epochs is None:
                raise ConfigError(f"lr kind {kind} needs 'min-max/SS', got {p['lr']!r}")
            ss = iters(lr.ss_epochs)
            if kind == "one_cycle":
                lr_policy = LrPolicy.one_cycle(lr.min, lr.max, ss, total, float(p["annihilation_factor"]))
            else:
                lr_policy = LrPolicy.triangular(lr.min, lr.max, ss, total)
        elif kind == "range_ramp":
            lr_policy = LrPolicy.ramp(lr.min, lr.max, total)
        else:
            raise ConfigError(f"unsupported lr_kind {kind!r}")

        m = parse_schedule_shorthand(p["momentum"], require_ss=False)
        mkind = p["momentum_kind"] or ("constant" if m.constant else "one_cycle_inverse")
        if mkind == "constant":
            mom = MomentumPolicy.constant(m.max)
        else:
            ss = iters(m.ss_epochs) if m.ss_epochs else (lr_policy.stepsize_iters or max(1, total // 2))
            if mkind == "one_cycle_inverse":
                mom = MomentumPolicy.one_cycle_inverse(m.max, m.min, ss)
            else:
                mom = MomentumPolicy(mkind, m.min, m.max, ss)

        eval_every = int(t["eval_interval_iters"]) or ipe
        return RunConfig(
            self.arch(), lr_policy, mom, weight_decay=float(t["weight_decay"]), tbs=tbs,
            epochs=epochs, seed=int(t["seed"]), init_scheme=t["init_scheme"],
            eval_interval_iters=eval_every, dataset=f"{d['source']}:{d['kind'] if d['source'] == 'synthetic' else d['path']}",
            val_fraction=float(d["val_fraction"]), split_seed=int(d["split_seed"]), max_iters=max_iters,
            cost_per_iter=float(self.get("search", "cost_per_iter")),
            cost_per_sample=float(self.get("search", "cost_per_sample")),
            divergence_factor=float(t["divergence_factor"]),
        )


def apply_overrides(cfg: ConfigFile, args) -> ConfigFile:
    """Command-line flags win over config keys."""
    train_kv = {}
    for flag, key in (("seed", "seed"), ("wd", "weight_decay"), ("tbs", "tbs"), ("epochs", "epochs")):
        v = getattr(args, flag, None)
        if v is not None:
            train_kv[key] = v
    if train_kv:
        cfg = cfg.with_values("train", **train_kv)
    pol = {}
    if getattr(args, "lr", None) is not None:
        pol["lr"] = args.lr
    if getattr(args, "momentum", None) is not None:
        pol["momentum"] = args.momentum
    if pol:
        cfg = cfg.with_values("policies", **pol)
    return cfg


def run_dir(out_dir, command: str, config: RunConfig) -> Path:
    """Directory named by command, config hash and seed, so distinct runs never collide."""
    d = Path(out_dir) / f"{command}-{config.hash()}-s{config.seed}"
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_json(path, obj) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, default=_jsonable)
        f.write("\n")


def _jsonable(x):
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, tuple):
        return list(x)
    return repr(x)


# --- SVG rendering -------------------------------------------------------

def render_svg(xs, ys, x_label: str, y_label: str, title: str = "",
               width: int = 640, height: int = 400) -> str:
    """Static line plot as standalone SVG markup."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    keep = np.isfinite(x) & np.isfinite(y)
    x, y = x[keep], y[keep]
    left, right, top, bottom = 70, 20, 30, 50
    pw, ph = width - left - right, height - top - bottom
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
             f'<rect width="{width}" height="{height}" fill="white"/>']
    if title:
        parts.append(f'<text x="{width / 2}" y="18" text-anchor="middle">{_esc(title)}</text>')
    parts.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    if len(x):
        x0, x1 = float(x.min()), float(x.max())
        y0, y1 = float(y.min()), float(y.max())
        if x1 == x0:
            x0, x1 = x0 - 0.5, x1 + 0.5
        if y1 == y0:
            y0, y1 = y0 - 0.5, y1 + 0.5

        def px(v):
            return left + (v - x0) / (x1 - x0) * pw

        def py(v):
            return top + ph - (v - y0) / (y1 - y0) * ph

        for i in range(5):
            tx = x0 + (x1 - x0) * i / 4
            ty = y0 + (y1 - y0) * i / 4
            parts.append(f'<text x="{px(tx):.1f}" y="{top + ph + 15}" text-anchor="middle">{tx:.3g}</text>')
            parts.append(f'<text x="{left - 5}" y="{py(ty) + 4:.1f}" text-anchor="end">{ty:.3g}</text>')
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x, y))
        parts.append(f'<polyline fill="none" stroke="#1f5fa8" stroke-width="1.5" points="{pts}"/>')
    parts.append(f'<text x="{left + pw / 2}" y="{height - 10}" text-anchor="middle">{_esc(x_label)}</text>')
    parts.append(f'<text x="15" y="{top + ph / 2}" text-anchor="middle" '
                 f'transform="rotate(-90 15 {top + ph / 2})">{_esc(y_label)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def read_csv_columns(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        raise DataError(f"{path}: empty file")
    header, body = rows[0], [r for r in rows[1:] if r]
    cols = {}
    for i, name in enumerate(header):
        try:
            cols[name] = np.array([float(r[i]) for r in body], dtype=np.float64)
        except ValueError:
            continue
    return cols


# --- commands ------------------------------------------------------------

def _setup(args):
    cfg = ConfigFile.load(args.config) if args.config else ConfigFile.default()
    return _setup_from(apply_overrides(cfg, args))


def _setup_from(cfg: ConfigFile):
    data = cfg.dataset()
    probe = RunConfig(cfg.arch(), LrPolicy.constant(0.01, 1), MomentumPolicy.constant(0.9),
                      val_fraction=float(cfg.get("data", "val_fraction")),
                      split_seed=int(cfg.get("data", "split_seed")))
    obj = build_objective(probe, data)
    rc = cfg.run_config(obj.n_train)
    problems = rc.violations(obj.n_train)
    if problems:
        raise ConfigError("; ".join(problems))
    return cfg, obj, rc


def _persist(dirpath: Path, cfg: ConfigFile) -> None:
    (dirpath / "config.cfg").write_text(cfg.to_text())


def cmd_train(args) -> int:
    cfg, obj, rc = _setup(args)
    out = run_dir(args.out_dir, "train", rc)
    _persist(out, cfg)
    resume = load_snapshot(args.resume) if args.resume else None
    log = train(rc, obj, resume=resume, stop_after=args.stop_after)
    log.to_csv(out / "runlog.csv")
    if log.state is not None and not log.diverged:
        save_snapshot(log.state, rc, out / "snapshot.hdsn")
    vl = [r.val_loss for r in log.eval_records()]
    verdict = None
    if len(vl) >= diagnostics.default_window(len(vl)):
        verdict = diagnostics.classify_curve(vl).to_dict()
    report = {"config_hash": rc.hash(), "seed": rc.seed, "iterations": len(log.records),
              "final_acc": log.final_acc, "diverged": log.diverged, "halt_iter": log.halt_iter,
              "halt_lr": log.halt_lr, "verdict": verdict}
    _write_json(out / "report.json", report)
    print(f"run directory: {out}")
    print(f"final val acc {log.final_acc:.4f}, diverged={log.diverged}")
    return EXIT_FAILED if log.diverged else EXIT_OK


def cmd_range_test(args) -> int:
    cfg = ConfigFile.load(args.config) if args.config else ConfigFile.default()
    lr_text = args.lr or cfg.get("search", "range_lr")
    rng_lr = parse_schedule_shorthand(lr_text, require_ss=False)
    if rng_lr.constant:
        raise ConfigError(f"range test needs 'min-max', got {lr_text!r}")
    args.lr = None
    if args.epochs is None:
        args.epochs = int(cfg.get("search", "range_epochs"))
    cfg = apply_overrides(cfg, args).with_values("search", range_lr=lr_text)
    # the ramp replaces the LR schedule; a constant placeholder keeps the config valid
    cfg = cfg.with_values("policies", lr=repr(rng_lr.min), lr_kind="constant")
    cfg, obj, rc = _setup_from(cfg)
    out = run_dir(args.out_dir, "range-test", rc)
    _persist(out, cfg)
    rep = run_range_test(rc, obj, rng_lr.min, rng_lr.max)
    rep.write(out / "range_test.csv", out / "range_test.json")
    rep.log.to_csv(out / "runlog.csv")
    region = diagnostics.find_overfit_region(rep)
    summary = rep.summary()
    summary["overfit_region"] = list(region) if region else None
    _write_json(out / "range_test.json", summary)
    print(f"run directory: {out}")
    print(f"divergence lr: {rep.divergence_lr}, loss minimum at lr: {rep.min_loss_lr}")
    for mode, b in rep.suggested().items():
        print(f"  {mode}: {'none' if b is None else f'{b[0]:.4g}-{b[1]:.4g}'}")
    return EXIT_FAILED if rep.diverged_at_start else EXIT_OK


def cmd_wd_search(args) -> int:
    cfg, obj, rc = _setup(args)
    s = cfg.sections["search"]
    cands = _floats(args.candidates) if args.candidates else _floats(s["wd_candidates"])
    snap = int(s["snapshot_at"]) if s["snapshot_at"] else None
    mode = s["wd_mode"]
    if mode == "snapshot_restart" and snap is None:
        snap = search.default_snapshot_point(cands, rc, obj)
    plan = search.WdSearchPlan(tuple(sorted(cands, reverse=True)), mode,
                               snap if mode == "snapshot_restart" else None)
    out = run_dir(args.out_dir, "wd-search", rc)
    _persist(out, cfg)
    res = search.wd_search(plan, rc, obj, jobs=args.jobs, refine=s["refine"] == "true",
                           metric=args.metric, seeds=int(s["seeds"]))
    body = res.to_dict()
    for i, t in enumerate(res.trials):
        p = out / f"trial{i}-wd{t.value!r}.csv"
        t.log.to_csv(p)
        body["trials"][i]["runlog"] = p.name
    _write_json(out / "wd_search.json", body)
    print(f"run directory: {out}")
    print(f"best weight decay: {res.best_wd!r}")
    return EXIT_OK


def cmd_momentum_sweep(args) -> int:
    cfg, obj, rc = _setup(args)
    s = cfg.sections["search"]
    values = _floats(args.values) if args.values else _floats(s["momenta"])
    out = run_dir(args.out_dir, "momentum-sweep", rc)
    _persist(out, cfg)
    res = search.momentum_sweep(values, rc, obj, epochs=int(s["short_epochs"]), jobs=args.jobs,
                                metric=args.metric, lower=float(s["min_momentum"]))
    body = res.to_dict()
    for i, t in enumerate(res.trials):
        p = out / f"trial{i}-m{t.value!r}.csv"
        t.log.to_csv(p)
        body["trials"][i]["runlog"] = p.name
    _write_json(out / "momentum_sweep.json", body)
    print(f"run directory: {out}")
    print(f"best momentum: {res.best_momentum!r}{' (tie)' if res.tie else ''}")
    return EXIT_OK


def _budget(cfg: ConfigFile, rc: RunConfig, n_train: int) -> BudgetModel:
    s = cfg.sections["search"]
    a, b = float(s["cost_per_iter"]), float(s["cost_per_sample"])
    if s["budget"]:
        total = float(s["budget"])
    else:
        total = rc.total_iters(n_train) * (a + b * rc.tbs)
    return BudgetModel(a, b, total)


def _tbs_sizes(cfg: ConfigFile, rc: RunConfig, n_train: int) -> list[int]:
    sizes = _ints(cfg.get("search", "tbs_sizes"))
    return sizes or [t for t in (rc.tbs, 2 * rc.tbs, 4 * rc.tbs) if t <= n_train // 4] or [rc.tbs]


def cmd_tbs_compare(args) -> int:
    cfg, obj, rc = _setup(args)
    s = cfg.sections["search"]
    model = _budget(cfg, rc, obj.n_train)
    sizes = _tbs_sizes(cfg, rc, obj.n_train)
    rl = parse_schedule_shorthand(s["range_lr"], require_ss=False)
    out = run_dir(args.out_dir, "tbs-compare", rc)
    _persist(out, cfg)
    res = search.tbs_compare(sizes, model, rc, obj, range_lr=(rl.min, rl.max),
                             range_epochs=int(s["range_epochs"]), jobs=args.jobs)
    body = res.to_dict()
    body["budget"] = {"a": model.a, "b": model.b, "budget": model.budget}
    for i, r in enumerate(res.runs):
        p = out / f"tbs{r.tbs}.csv"
        r.result.log.to_csv(p)
        body["runs"][i]["runlog"] = p.name
    _write_json(out / "tbs_compare.json", body)
    print(f"run directory: {out}")
    order = res.by_loss if args.metric == "loss" else res.by_acc
    print(f"ranking by {args.metric}: {order}")
    return EXIT_OK if order else EXIT_FAILED


def cmd_recipe(args) -> int:
    cfg, obj, rc = _setup(args)
    s = cfg.sections["search"]
    rl = parse_schedule_shorthand(s["range_lr"], require_ss=False)
    out = run_dir(args.out_dir, "recipe", rc)
    _persist(out, cfg)
    rep = search.run_recipe(
        obj, rc.arch, _budget(cfg, rc, obj.n_train), base=rc, range_lr=(rl.min, rl.max),
        range_epochs=int(s["range_epochs"]), tbs_sizes=_tbs_sizes(cfg, rc, obj.n_train),
        momenta=_floats(s["momenta"]), wd_candidates=_floats(s["wd_candidates"]),
        short_epochs=int(s["short_epochs"]),
        confirm_epochs=int(s["confirm_epochs"]) if s["confirm_epochs"] else None,
        metric=args.metric, jobs=args.jobs, min_momentum=float(s["min_momentum"]))
    body = rep.to_dict()
    if rep.confirmation is not None:
        rep.confirmation.to_csv(out / "runlog.csv")
        body["runlog"] = "runlog.csv"
    _write_json(out / "recipe.json", body)
    print(f"run directory: {out}")
    if rep.failed_step is not None:
        print(f"recipe stopped at step {rep.failed_step}: {rep.error}")
        return EXIT_FAILED
    print(f"lr {rep.lr_bounds}, tbs {rep.tbs}, momentum {rep.momentum_bounds}, wd {rep.weight_decay!r}")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    cols = read_csv_columns(args.runlog)
    if args.column not in cols:
        raise DataError(f"{args.runlog}: no numeric column {args.column!r}")
    y = cols[args.column]
    if "val_loss" in cols and "iter" in cols and args.column in ("val_loss", "val_acc"):
        # val columns repeat between evaluations; keep the rows where they change
        keep = np.r_[True, np.diff(y) != 0]
        y = y[keep]
    v = diagnostics.classify_curve(y, window=args.window, tol=args.tol)
    print(f"{v.kind}: slope {v.slope:.3g} over the last {v.window} points (threshold {v.threshold:g})"
          + (f", minimum at point {v.overfit_onset}" if v.overfit_onset is not None else ""))
    print(json.dumps(v.to_dict(), default=_jsonable))
    return EXIT_OK


def cmd_plot(args) -> int:
    cols = read_csv_columns(args.csv)
    for c in (args.x, args.y):
        if c not in cols:
            raise DataError(f"{args.csv}: no numeric column {c!r}; have {sorted(cols)}")
    out = Path(args.output) if args.output else Path(args.csv).with_suffix(f".{args.y}-vs-{args.x}.svg")
    out.write_text(render_svg(cols[args.x], cols[args.y], args.x, args.y, title=Path(args.csv).name))
    print(f"wrote {out}")
    return EXIT_OK


COMMANDS = {
    "range-test": cmd_range_test, "train": cmd_train, "wd-search": cmd_wd_search,
    "momentum-sweep": cmd_momentum_sweep, "tbs-compare": cmd_tbs_compare, "recipe": cmd_recipe,
    "diagnose": cmd_diagnose, "plot": cmd_plot,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI file with [arch] [data] [train] [policies] [search]")
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    common.add_argument("--out-dir", default="runs")
    common.add_argument("--lr", help="'min-max/SS' (SS in epochs) or a constant")
    common.add_argument("--momentum", help="'min-max' cyclic bounds or a constant")
    common.add_argument("--wd", type=float)
    common.add_argument("--tbs", type=int)
    common.add_argument("--epochs", type=int)
    common.add_argument("--metric", choices=("loss", "acc"), default="loss")

    p = argparse.ArgumentParser(prog="hyperdisc", description="Schedule-driven SGD experiments on small MLPs.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("range-test", parents=[common], help="LR range test")
    t = sub.add_parser("train", parents=[common], help="one training run")
    t.add_argument("--resume", help="snapshot file to continue from")
    t.add_argument("--stop-after", type=int, help="stop after this iteration and snapshot")
    w = sub.add_parser("wd-search", parents=[common], help="weight-decay grid")
    w.add_argument("--candidates", help="comma-separated weight decays")
    m = sub.add_parser("momentum-sweep", parents=[common], help="constant-momentum sweep")
    m.add_argument("--values", help="comma-separated momenta")
    sub.add_parser("tbs-compare", parents=[common], help="batch sizes at a fixed budget")
    sub.add_parser("recipe", parents=[common], help="full four-step search plus confirmation run")
    d = sub.add_parser("diagnose", help="classify a validation curve from a run log")
    d.add_argument("runlog")
    d.add_argument("--column", default="val_loss")
    d.add_argument("--window", type=int)
    d.add_argument("--tol", type=float, default=diagnostics.DEFAULT_TOL)
    pl = sub.add_parser("plot", help="SVG line plot of two CSV columns")
    pl.add_argument("csv")
    pl.add_argument("--x", default="lr")
    pl.add_argument("--y", default="val_loss")
    pl.add_argument("-o", "--output")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, PolicyError, SpecError, DataError, SnapshotError, FileNotFoundError,
            BudgetError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (search.SearchError, RangeTestError, ValueError) as e:
        print(f"failed: {e}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    sys.exit(main())
