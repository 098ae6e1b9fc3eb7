"""Per-iteration execution cost model t(TBS) = a + b*TBS."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class BudgetError(ValueError):
    pass


@dataclass(frozen=True)
class BudgetModel:
    a: float
    b: float
    budget: float = math.inf

    def __post_init__(self):
        if self.a < 0 or self.b < 0 or self.a + self.b <= 0:
            raise BudgetError(f"need a >= 0, b >= 0 and a + b > 0, got a={self.a}, b={self.b}")

    def cost(self, tbs: int) -> float:
        return self.a + self.b * tbs

    def iterations(self, tbs: int) -> int:
        t = self.cost(tbs)
        n = math.floor(self.budget / t)
        if n < 1:
            raise BudgetError(f"budget {self.budget} is below one iteration at TBS {tbs} (cost {t})")
        return n


def fit_budget(sizes, times, budget: float = math.inf) -> BudgetModel:
    """Least-squares fit of per-iteration times to a + b*TBS."""
    sizes = np.asarray(sizes, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    if sizes.size < 2 or np.unique(sizes).size < 2:
        raise BudgetError("need timings at two or more distinct batch sizes")
    design = np.stack([np.ones_like(sizes), sizes], axis=1)
    (a, b), *_ = np.linalg.lstsq(design, times, rcond=None)
    a, b = float(a), float(b)
    if abs(b) < 1e-12 * max(1.0, abs(a)):
        b = 0.0
    if a < 0 or b < 0 or np.any(a + b * sizes <= 0):
        raise BudgetError(f"degenerate cost fit a={a:.4g}, b={b:.4g}")
    return BudgetModel(a, b, budget)
