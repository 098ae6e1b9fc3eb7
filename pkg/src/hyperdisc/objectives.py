"""Trainable problems the harness can drive.

An objective exposes ``n_train``, ``init_params``, ``batch(indices)``,
``loss_and_grad(params, batch)`` and ``evaluate(params)``. The MLP objective
is the real workload; the quadratic bowl has a closed-form stability limit
and is used to check divergence detection.
"""
from __future__ import annotations

import numpy as np

from . import netcore
from .data import Dataset


class MLPObjective:
    def __init__(self, arch: netcore.ArchSpec, train: Dataset, val: Dataset):
        if train.dim != arch.input_dim:
            raise netcore.SpecError(f"dataset has {train.dim} features but arch expects {arch.input_dim}")
        if train.class_count > arch.class_count:
            raise netcore.SpecError(
                f"dataset has {train.class_count} classes but arch outputs {arch.class_count}"
            )
        self.arch = arch
        self.train = train
        self.val = val
        self.n_train = len(train)

    def init_params(self, scheme: str, seed: int) -> np.ndarray:
        return netcore.init_network(self.arch, scheme, seed).params

    def batch(self, idx):
        return self.train.features[idx], self.train.labels[idx]

    def loss_and_grad(self, params, batch):
        x, y = batch
        return netcore.loss_and_grad(netcore.Network(self.arch, params), x, y)

    def evaluate(self, params):
        return netcore.evaluate(netcore.Network(self.arch, params), self.val)


class QuadraticBowl:
    """Per-sample loss 0.5*curvature*(theta - x_i)**2 on a 1-D parameter.

    Batch gradients are noisy estimates of curvature*(theta - mean(x)), so
    iterates hover near the minimum instead of collapsing to it. Plain GD is
    stable for lr < 2/curvature, heavy-ball momentum for
    lr < 2*(1+momentum)/curvature. Accuracy is not defined and reported as 0.
    """

    def __init__(self, curvature: float = 1.0, n: int = 2000, center: float = 1.0,
                 spread: float = 1.0, start: float = 0.0, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.curvature = float(curvature)
        self.samples = center + spread * rng.standard_normal(n)
        self.start = float(start)
        self.n_train = n
        self._mean = float(self.samples.mean())
        self._var = float(self.samples.var())

    def init_params(self, scheme: str, seed: int) -> np.ndarray:
        return np.array([self.start])

    def batch(self, idx):
        return self.samples[idx]

    def loss_and_grad(self, params, batch):
        d = params[0] - batch
        loss = float(0.5 * self.curvature * np.mean(d * d))
        return loss, np.array([self.curvature * float(np.mean(d))])

    def evaluate(self, params):
        d = params[0] - self._mean
        return float(0.5 * self.curvature * (d * d + self._var)), 0.0
