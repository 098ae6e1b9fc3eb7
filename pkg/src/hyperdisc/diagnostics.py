"""Validation-loss curve analysis: under/overfitting, plateau and divergence."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

VERDICTS = ("underfitting", "overfitting", "balanced", "diverged")
DEFAULT_BETA = 0.95
DEFAULT_TOL = 1e-3


@dataclass(frozen=True)
class CurveVerdict:
    kind: str
    window: int
    slope: float
    threshold: float
    overfit_onset: int | None = None

    @property
    def evidence(self) -> tuple[int, float, float]:
        return (self.window, self.slope, self.threshold)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "window": self.window, "slope": self.slope,
                "threshold": self.threshold, "overfit_onset": self.overfit_onset}


def ema(series, beta: float = DEFAULT_BETA) -> np.ndarray:
    """Exponential moving average seeded with the first value (no bias correction)."""
    x = np.asarray(series, dtype=np.float64)
    out = np.empty_like(x)
    acc = None
    for i, v in enumerate(x):
        # incremental form: a constant input leaves the average exactly unchanged
        acc = v if acc is None else acc + (1.0 - beta) * (v - acc)
        out[i] = acc
    return out


def generalization_error(val_loss, train_loss) -> np.ndarray:
    v = np.asarray(val_loss, dtype=np.float64)
    t = np.asarray(train_loss, dtype=np.float64)
    if v.shape != t.shape:
        raise ValueError(f"length mismatch: {v.shape} vs {t.shape}")
    return v - t


def trailing_slope(y: np.ndarray, window: int) -> float:
    """Least-squares slope per sample over the last ``window`` values."""
    tail = y[-window:]
    t = np.arange(len(tail), dtype=np.float64)
    t -= t.mean()
    return float(np.dot(t, tail - tail.mean()) / np.dot(t, t))


def default_window(n: int) -> int:
    return max(10, int(0.1 * n))


def classify_curve(val_loss, beta: float = DEFAULT_BETA, window: int | None = None,
                   tol: float = DEFAULT_TOL) -> CurveVerdict:
    """Label a validation-loss series.

    The smoothed curve's trailing slope decides: falling means underfitting,
    flat means balanced, rising after an earlier minimum means overfitting.
    A curve that rises without ever having dipped, or holds non-finite
    values, is diverged.
    """
    y = np.asarray(val_loss, dtype=np.float64)
    w = default_window(len(y)) if window is None else window
    if w < 2:
        raise ValueError(f"slope window must be at least 2, got {w}")
    if len(y) < w:
        raise ValueError(f"series of length {len(y)} is shorter than the slope window {w}")
    if not np.all(np.isfinite(y)):
        return CurveVerdict("diverged", w, math.nan, tol)
    s = ema(y, beta)
    slope = trailing_slope(s, w)
    if slope < -tol:
        return CurveVerdict("underfitting", w, slope, tol)
    if slope > tol:
        onset = int(np.argmin(s))
        if onset > 0:
            return CurveVerdict("overfitting", w, slope, tol, onset)
        return CurveVerdict("diverged", w, slope, tol)
    return CurveVerdict("balanced", w, slope, tol)


def find_overfit_region(report, min_rise: float | None = None) -> tuple[float, float] | None:
    """LR interval before the loss minimum where the smoothed loss climbs.

    The interval runs from a trough to the highest point reached after it,
    choosing the pair with the largest rise that precedes the global minimum.
    Rises no larger than ``min_rise`` (default: 5% of the smoothed loss range
    before the minimum) are ignored.
    """
    lrs = np.array([s.lr for s in report.samples], dtype=np.float64)
    loss = np.array([s.smoothed_val_loss for s in report.samples], dtype=np.float64)
    if len(loss) < 3 or not np.all(np.isfinite(loss)):
        return None
    argmin = int(np.argmin(loss))
    if argmin < 2:
        return None
    head = loss[:argmin + 1]
    if min_rise is None:
        min_rise = 0.05 * float(head.max() - head.min())
    trough = np.minimum.accumulate(head)
    trough_at = np.array([int(np.argmin(head[:j + 1])) for j in range(len(head))])
    rise = head - trough
    peak = int(np.argmax(rise))
    if rise[peak] <= min_rise or rise[peak] <= 0:
        return None
    return float(lrs[trough_at[peak]]), float(lrs[peak])
