"""SGD with heavy-ball momentum and coupled (L2-in-gradient) weight decay.

One step computes::

    g' = grad + weight_decay * theta
    v  = momentum * v - lr * g'
    theta = theta + v
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class DivergenceError(FloatingPointError):
    """Raised when a step would introduce non-finite values."""

    def __init__(self, message, iter=None):
        super().__init__(message)
        self.iter = iter


@dataclass(frozen=True)
class HyperParams:
    lr: float
    momentum: float = 0.0
    weight_decay: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.lr) and self.lr > 0):
            raise ValueError(f"lr must be positive and finite, got {self.lr}")
        if not 0 <= self.momentum <= 1:
            raise ValueError(f"momentum must lie in [0, 1], got {self.momentum}")
        if not (math.isfinite(self.weight_decay) and self.weight_decay >= 0):
            raise ValueError(f"weight_decay must be nonnegative, got {self.weight_decay}")


@dataclass
class OptimizerState:
    velocity: np.ndarray
    iter: int = 0


def reset_state(params) -> OptimizerState:
    """Zero velocity for a network (or a raw parameter vector)."""
    theta = getattr(params, "params", params)
    return OptimizerState(np.zeros_like(np.asarray(theta, dtype=np.float64)), 0)


def sgd_update(theta: np.ndarray, grad: np.ndarray, hp: HyperParams,
               state: OptimizerState) -> tuple[np.ndarray, OptimizerState]:
    """Array-level step; inputs are not mutated."""
    if grad.shape != theta.shape or state.velocity.shape != theta.shape:
        raise ValueError(
            f"layout mismatch: params {theta.shape}, grad {grad.shape}, velocity {state.velocity.shape}"
        )
    if not np.all(np.isfinite(grad)):
        raise DivergenceError(f"non-finite gradient at iteration {state.iter}", state.iter)
    # overflow is checked explicitly below
    with np.errstate(over="ignore", invalid="ignore"):
        g = grad + hp.weight_decay * theta
        v = hp.momentum * state.velocity - hp.lr * g
        new_theta = theta + v
    if not (np.all(np.isfinite(new_theta)) and np.all(np.isfinite(v))):
        raise DivergenceError(f"parameters overflowed at iteration {state.iter}", state.iter)
    return new_theta, OptimizerState(v, state.iter + 1)


def sgd_step(net, grad, hp: HyperParams, state: OptimizerState):
    """Apply one update to a Network; returns ``(new_net, new_state)``."""
    theta, new_state = sgd_update(net.params, np.asarray(grad, dtype=np.float64), hp, state)
    return net.with_params(theta), new_state
