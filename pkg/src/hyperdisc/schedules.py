"""Closed-form learning-rate and momentum policies indexed by iteration."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

LR_KINDS = ("constant", "step", "inv_decay", "exp_decay", "triangular_clr", "one_cycle", "range_ramp")
MOMENTUM_KINDS = ("constant", "linear_cycle", "appendix_decaying_cycle", "one_cycle_inverse")
CYCLIC_LR = ("triangular_clr", "one_cycle", "range_ramp")


class PolicyError(ValueError):
    pass


@dataclass(frozen=True)
class LrPolicy:
    kind: str
    base_lr: float
    total_iters: int
    max_lr: float | None = None
    stepsize_iters: int | None = None
    step_drop_factor: float = 0.1
    step_interval: int | None = None
    gamma: float = 1e-4
    power: float = 0.75
    annihilation_factor: float = 1000.0

    @classmethod
    def constant(cls, lr: float, total_iters: int) -> "LrPolicy":
        return cls("constant", lr, total_iters)

    @classmethod
    def one_cycle(cls, base_lr, max_lr, stepsize_iters, total_iters, annihilation_factor=1000.0):
        return cls("one_cycle", base_lr, total_iters, max_lr=max_lr,
                   stepsize_iters=stepsize_iters, annihilation_factor=annihilation_factor)

    @classmethod
    def triangular(cls, base_lr, max_lr, stepsize_iters, total_iters):
        return cls("triangular_clr", base_lr, total_iters, max_lr=max_lr, stepsize_iters=stepsize_iters)

    @classmethod
    def ramp(cls, lr_min, lr_max, total_iters):
        return cls("range_ramp", lr_min, total_iters, max_lr=lr_max)

    @classmethod
    def step(cls, base_lr, step_interval, total_iters, drop_factor=0.1):
        return cls("step", base_lr, total_iters, step_interval=step_interval, step_drop_factor=drop_factor)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class MomentumPolicy:
    kind: str
    base_momentum: float
    peak_momentum: float | None = None
    stepsize_iters: int | None = None

    @classmethod
    def constant(cls, m: float) -> "MomentumPolicy":
        return cls("constant", m)

    @classmethod
    def one_cycle_inverse(cls, peak, base, stepsize_iters):
        return cls("one_cycle_inverse", base, peak, stepsize_iters)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _lr_violations(p: LrPolicy) -> list[str]:
    out = []
    if p.kind not in LR_KINDS:
        return [f"unknown lr policy kind {p.kind!r}"]
    if not isinstance(p.total_iters, int) or p.total_iters < 1:
        out.append(f"total_iters must be a positive integer, got {p.total_iters!r}")
    if not (math.isfinite(p.base_lr) and p.base_lr > 0):
        out.append(f"base_lr must be positive, got {p.base_lr}")
    if p.kind in CYCLIC_LR:
        if p.max_lr is None or not math.isfinite(p.max_lr) or p.max_lr <= 0:
            out.append(f"{p.kind} needs a positive max_lr, got {p.max_lr}")
        elif p.max_lr < p.base_lr:
            out.append(f"max_lr {p.max_lr} is below base_lr {p.base_lr}")
    if p.kind in ("triangular_clr", "one_cycle"):
        if not isinstance(p.stepsize_iters, int) or p.stepsize_iters < 1:
            out.append(f"{p.kind} needs a positive integer stepsize_iters, got {p.stepsize_iters!r}")
        elif p.kind == "one_cycle" and isinstance(p.total_iters, int) and 2 * p.stepsize_iters > p.total_iters:
            out.append(
                f"cycle exceeds run length: 2*stepsize {2 * p.stepsize_iters} > total_iters {p.total_iters}"
            )
    if p.kind == "one_cycle" and not p.annihilation_factor >= 1:
        out.append(f"annihilation_factor must be >= 1, got {p.annihilation_factor}")
    if p.kind == "step":
        if not isinstance(p.step_interval, int) or p.step_interval < 1:
            out.append(f"step needs a positive integer step_interval, got {p.step_interval!r}")
        if not 0 < p.step_drop_factor <= 1:
            out.append(f"step_drop_factor must lie in (0, 1], got {p.step_drop_factor}")
    if p.kind == "inv_decay" and (p.gamma < 0 or p.power < 0):
        out.append("inv_decay needs gamma >= 0 and power >= 0")
    if p.kind == "exp_decay" and not 0 < p.gamma <= 1:
        out.append(f"exp_decay needs gamma in (0, 1], got {p.gamma}")
    return out


def _momentum_violations(p: MomentumPolicy) -> list[str]:
    if p.kind not in MOMENTUM_KINDS:
        return [f"unknown momentum policy kind {p.kind!r}"]
    out = []
    if not 0 <= p.base_momentum < 1:
        out.append(f"base_momentum must lie in [0, 1), got {p.base_momentum}")
    if p.kind != "constant":
        if p.peak_momentum is None or not 0 <= p.peak_momentum <= 1:
            out.append(f"peak_momentum must lie in [0, 1], got {p.peak_momentum}")
        elif p.peak_momentum < p.base_momentum:
            out.append(f"peak_momentum {p.peak_momentum} is below base_momentum {p.base_momentum}")
        if not isinstance(p.stepsize_iters, int) or p.stepsize_iters < 1:
            out.append(f"{p.kind} needs a positive integer stepsize_iters, got {p.stepsize_iters!r}")
    return out


def validate_policy(policy: LrPolicy | MomentumPolicy) -> list[str]:
    """Return every violated invariant; an empty list means the policy is valid."""
    if isinstance(policy, LrPolicy):
        return _lr_violations(policy)
    if isinstance(policy, MomentumPolicy):
        return _momentum_violations(policy)
    return [f"not a policy: {type(policy).__name__}"]


def ensure_valid(policy) -> None:
    problems = validate_policy(policy)
    if problems:
        raise PolicyError("; ".join(problems))


def _triangle(iter: int, ss: int) -> float:
    """0 at cycle boundaries, 1 at mid-cycle, linear in between."""
    cycle = iter // (2 * ss)
    x = abs(iter / ss - 2 * cycle - 1)
    return max(0.0, 1.0 - x)


def lr_at(policy: LrPolicy, iter: int) -> float:
    if iter < 0 or iter >= policy.total_iters:
        raise PolicyError(f"iteration {iter} outside [0, {policy.total_iters})")
    p = policy
    kind = p.kind
    if kind == "constant":
        return p.base_lr
    if kind == "step":
        return p.base_lr * p.step_drop_factor ** (iter // p.step_interval)
    if kind == "inv_decay":
        return p.base_lr * (1.0 + p.gamma * iter) ** (-p.power)
    if kind == "exp_decay":
        return p.base_lr * p.gamma ** iter
    if kind == "triangular_clr":
        return p.base_lr + (p.max_lr - p.base_lr) * _triangle(iter, p.stepsize_iters)
    if kind == "range_ramp":
        if p.total_iters == 1:
            return p.base_lr
        return p.base_lr + (p.max_lr - p.base_lr) * iter / (p.total_iters - 1)
    if kind == "one_cycle":
        ss = p.stepsize_iters
        if iter <= ss:
            return p.base_lr + (p.max_lr - p.base_lr) * iter / ss
        if iter <= 2 * ss:
            return p.max_lr - (p.max_lr - p.base_lr) * (iter - ss) / ss
        tail = p.total_iters - 1 - 2 * ss
        floor_lr = p.base_lr / p.annihilation_factor
        return p.base_lr + (floor_lr - p.base_lr) * (iter - 2 * ss) / tail
    raise PolicyError(f"unknown lr policy kind {kind!r}")


def momentum_at(policy: MomentumPolicy, iter: int) -> float:
    if iter < 0:
        raise PolicyError(f"negative iteration {iter}")
    p = policy
    if p.kind == "constant":
        return p.base_momentum
    base, peak, ss = p.base_momentum, p.peak_momentum, p.stepsize_iters
    if p.kind == "appendix_decaying_cycle":
        cycle = iter // (2 * ss)
        x = (iter - (2 * cycle + 1) * ss) / ss
        # ldexp scales by 2**-cycle and underflows to 0 instead of overflowing
        return base + (peak - base) * min(1.0, max(0.0, math.ldexp(1.0 - abs(x), -cycle)))
    if p.kind == "linear_cycle":
        # mirror of triangular CLR: peak at cycle boundaries, base mid-cycle
        return peak - (peak - base) * _triangle(iter, ss)
    if p.kind == "one_cycle_inverse":
        if iter <= ss:
            return peak - (peak - base) * iter / ss
        if iter <= 2 * ss:
            return base + (peak - base) * (iter - ss) / ss
        return peak
    raise PolicyError(f"unknown momentum policy kind {p.kind!r}")


def cycle_index(policy: LrPolicy | MomentumPolicy, iter: int) -> int:
    ss = policy.stepsize_iters
    if not ss:
        return 0
    return iter // (2 * ss)


def rescale(policy, total_iters: int, old_total: int | None = None):
    """Stretch an iteration-indexed policy to a run of ``total_iters``.

    Stepsizes and step intervals scale by the ratio of run lengths, so a
    policy defined for one batch size keeps its shape in epochs at another.
    """
    if old_total is None:
        old_total = getattr(policy, "total_iters", None)
    if not old_total:
        raise PolicyError("rescale needs the original run length")
    ratio = total_iters / old_total

    def scaled(v):
        return None if v is None else max(1, int(round(v * ratio)))

    if isinstance(policy, LrPolicy):
        new = replace(policy, total_iters=total_iters,
                      stepsize_iters=scaled(policy.stepsize_iters),
                      step_interval=scaled(policy.step_interval))
        if new.kind == "one_cycle" and 2 * new.stepsize_iters > total_iters:
            new = replace(new, stepsize_iters=total_iters // 2)
        return new
    return replace(policy, stepsize_iters=scaled(policy.stepsize_iters))
