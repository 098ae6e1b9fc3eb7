"""Small dense feedforward classifier with exact backpropagation.

Parameters live in one flat float64 vector. The layout is, per layer, the
weight matrix of shape ``(fan_in, fan_out)`` in row-major order followed by
the bias vector, so ``logits = x @ W + b`` at every layer.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

ACTIVATIONS = ("relu", "tanh")
INIT_SCHEMES = ("fan_in_scaled_normal", "fan_avg_uniform")


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class ArchSpec:
    layer_sizes: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2:
            raise SpecError(
                f"layer_sizes needs at least 2 entries (input, classes), got {list(sizes)}"
            )
        if any(s < 1 for s in sizes):
            raise SpecError(f"all layer sizes must be >= 1, got {list(sizes)}")
        if sizes[-1] < 2:
            raise SpecError(f"need at least 2 classes, got {sizes[-1]}")
        if self.activation not in ACTIVATIONS:
            raise SpecError(f"unknown activation {self.activation!r}; expected one of {ACTIVATIONS}")

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def class_count(self) -> int:
        return self.layer_sizes[-1]

    @property
    def shapes(self) -> list[tuple[int, int]]:
        return list(zip(self.layer_sizes[:-1], self.layer_sizes[1:]))

    @property
    def param_count(self) -> int:
        return sum(i * o + o for i, o in self.shapes)

    def to_dict(self) -> dict:
        return {"layer_sizes": list(self.layer_sizes), "activation": self.activation}


@dataclass(frozen=True)
class Network:
    spec: ArchSpec
    params: np.ndarray = field(repr=False)

    def __post_init__(self):
        params = np.asarray(self.params, dtype=np.float64)
        if params.ndim != 1 or params.size != self.spec.param_count:
            raise SpecError(
                f"params length {params.size} does not match layout size {self.spec.param_count}"
            )
        object.__setattr__(self, "params", params)

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return unflatten(self.spec, self.params)

    def with_params(self, params: np.ndarray) -> "Network":
        return Network(self.spec, params)


class ForwardCache(NamedTuple):
    # inputs to each layer and pre-activations of each hidden layer
    activations: list[np.ndarray]
    preacts: list[np.ndarray]


def unflatten(spec: ArchSpec, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Split a flat vector into ``[(W, b), ...]`` views (no copies)."""
    out = []
    pos = 0
    for fan_in, fan_out in spec.shapes:
        w = params[pos:pos + fan_in * fan_out].reshape(fan_in, fan_out)
        pos += fan_in * fan_out
        b = params[pos:pos + fan_out]
        pos += fan_out
        out.append((w, b))
    return out


def flatten(layers: Sequence[tuple[np.ndarray, np.ndarray]]) -> np.ndarray:
    parts = []
    for w, b in layers:
        parts.append(np.ascontiguousarray(w, dtype=np.float64).ravel())
        parts.append(np.asarray(b, dtype=np.float64).ravel())
    if not parts:
        return np.zeros(0)
    return np.concatenate(parts)


def init_network(spec: ArchSpec, scheme: str = "fan_in_scaled_normal", seed: int = 0) -> Network:
    """Initialize weights with the named scheme; biases start at zero.

    ``fan_in_scaled_normal`` draws N(0, 2/fan_in) (msra style);
    ``fan_avg_uniform`` draws U(-a, a) with a = sqrt(6/(fan_in+fan_out)),
    i.e. variance 2/(fan_in+fan_out) (xavier style).
    """
    if not isinstance(spec, ArchSpec):
        spec = ArchSpec(*spec)
    if scheme not in INIT_SCHEMES:
        raise SpecError(f"unknown init scheme {scheme!r}; expected one of {INIT_SCHEMES}")
    rng = np.random.default_rng(seed)
    layers = []
    for fan_in, fan_out in spec.shapes:
        if scheme == "fan_in_scaled_normal":
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        else:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        layers.append((w, np.zeros(fan_out)))
    return Network(spec, flatten(layers))


def _activate(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activate_grad(kind: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return (z > 0).astype(np.float64)
    return 1.0 - a * a


def _check_inputs(spec: ArchSpec, inputs) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.input_dim:
        raise SpecError(f"expected inputs of shape (n, {spec.input_dim}), got {x.shape}")
    return x


def forward(net: Network, inputs) -> tuple[np.ndarray, ForwardCache]:
    x = _check_inputs(net.spec, inputs)
    layers = net.layers()
    acts = [x]
    preacts = []
    h = x
    for i, (w, b) in enumerate(layers):
        z = h @ w + b
        if i == len(layers) - 1:
            return z, ForwardCache(acts, preacts)
        preacts.append(z)
        h = _activate(net.spec.activation, z)
        acts.append(h)
    raise AssertionError("unreachable")


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _check_labels(spec: ArchSpec, labels, n: int) -> np.ndarray:
    y = np.asarray(labels)
    if y.ndim != 1 or y.shape[0] != n:
        raise SpecError(f"expected {n} labels, got shape {y.shape}")
    y = y.astype(np.int64)
    if n and (y.min() < 0 or y.max() >= spec.class_count):
        raise SpecError(f"labels must lie in [0, {spec.class_count}), got range [{y.min()}, {y.max()}]")
    return y


def loss_and_grad(net: Network, inputs, labels) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy over the batch and its exact gradient.

    The gradient is a flat vector in the same layout as ``net.params``.
    """
    logits, cache = forward(net, inputs)
    n = logits.shape[0]
    if n == 0:
        raise SpecError("loss_and_grad needs a nonempty batch")
    y = _check_labels(net.spec, labels, n)
    logp = _log_softmax(logits)
    loss = float(-logp[np.arange(n), y].mean())

    delta = np.exp(logp)
    delta[np.arange(n), y] -= 1.0
    delta /= n

    layers = net.layers()
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(layers)  # type: ignore[list-item]
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        grads[i] = (cache.activations[i].T @ delta, delta.sum(axis=0))
        if i > 0:
            z = cache.preacts[i - 1]
            a = cache.activations[i]
            delta = (delta @ w.T) * _activate_grad(net.spec.activation, z, a)
    return loss, flatten(grads)


def evaluate(net: Network, data) -> tuple[float, float]:
    """Return (mean cross-entropy, argmax accuracy) over a whole dataset."""
    x, y = data.features, data.labels
    if len(y) == 0:
        raise SpecError("cannot evaluate on an empty dataset")
    logits, _ = forward(net, x)
    y = _check_labels(net.spec, y, logits.shape[0])
    logp = _log_softmax(logits)
    loss = float(-logp[np.arange(len(y)), y].mean())
    acc = float(np.mean(np.argmax(logits, axis=1) == y))
    return loss, acc
