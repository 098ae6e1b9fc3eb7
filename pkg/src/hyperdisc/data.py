"""Datasets: IDX/CSV loaders, synthetic generators, splits and batching."""
from __future__ import annotations

import csv
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

IDX_IMAGE_MAGIC = 2051
IDX_LABEL_MAGIC = 2049
SYNTHETIC_KINDS = ("gaussian_blobs", "two_spirals", "moons")


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    class_count: int
    name: str = ""

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2:
            raise DataError(f"features must be a 2-D matrix, got shape {x.shape}")
        if x.shape[0] != y.shape[0]:
            raise DataError(f"{x.shape[0]} feature rows but {y.shape[0]} labels")
        if y.size and (y.min() < 0 or y.max() >= self.class_count):
            raise DataError(f"labels must lie in [0, {self.class_count})")
        if not np.all(np.isfinite(x)):
            raise DataError("features contain non-finite values")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)

    def __len__(self) -> int:
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx, name=None) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.class_count, name or self.name)


@dataclass(frozen=True)
class BatchPlan:
    tbs: int
    shuffle_seed: int = 0
    drop_last: bool = False

    def batches_per_epoch(self, n: int) -> int:
        return n // self.tbs if self.drop_last else -(-n // self.tbs)


def _read_idx(path, expected_magic: int, header_ints: int) -> tuple[tuple[int, ...], bytes]:
    raw = Path(path).read_bytes()
    head_len = 4 * header_ints
    if len(raw) < head_len:
        raise DataError(f"{path}: truncated header, expected at least {head_len} bytes, got {len(raw)}")
    header = struct.unpack(f">{header_ints}i", raw[:head_len])
    if header[0] != expected_magic:
        raise DataError(f"{path}: bad magic number {header[0]}, expected {expected_magic}")
    dims = header[1:]
    expected = head_len + int(np.prod(dims))
    if len(raw) < expected:
        raise DataError(f"{path}: truncated file, expected {expected} bytes, got {len(raw)}")
    return dims, raw[head_len:expected]


def load_idx(image_path, label_path, name: str = "idx") -> Dataset:
    """Read an IDX image/label pair (big-endian, magic 2051/2049).

    Pixels are scaled to [0, 1] and flattened to one row per image.
    """
    dims, pixels = _read_idx(image_path, IDX_IMAGE_MAGIC, 4)
    (count,), labels = _read_idx(label_path, IDX_LABEL_MAGIC, 2)
    if dims[0] != count:
        raise DataError(f"image count {dims[0]} does not match label count {count}")
    x = np.frombuffer(pixels, dtype=np.uint8).reshape(dims[0], dims[1] * dims[2]) / 255.0
    y = np.frombuffer(labels, dtype=np.uint8).astype(np.int64)
    return Dataset(x, y, 10, name)


def write_idx(image_path, label_path, images: np.ndarray, labels: np.ndarray) -> None:
    """Write uint8 images of shape (n, rows, cols) and labels in IDX format."""
    images = np.asarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(image_path, "wb") as f:
        f.write(struct.pack(">4i", IDX_IMAGE_MAGIC, n, rows, cols))
        f.write(images.tobytes())
    with open(label_path, "wb") as f:
        f.write(struct.pack(">2i", IDX_LABEL_MAGIC, n))
        f.write(np.asarray(labels, dtype=np.uint8).tobytes())


def load_mnist(root=None, split: str = "train") -> Dataset:
    """Load MNIST from ``root`` or ``$HYPERDISC_DATA_DIR`` (standard file names)."""
    root = Path(root or os.environ.get("HYPERDISC_DATA_DIR", "."))
    prefix = "train" if split == "train" else "t10k"
    candidates = [root, root / "mnist", root / "MNIST"]
    for d in candidates:
        img = d / f"{prefix}-images-idx3-ubyte"
        lab = d / f"{prefix}-labels-idx1-ubyte"
        if img.exists() and lab.exists():
            return load_idx(img, lab, name=f"mnist-{split}")
    raise FileNotFoundError(f"MNIST {split} files not found under {root}")


def load_csv(path, class_count: int | None = None, name: str | None = None) -> Dataset:
    """CSV with a header row; the label is the final column."""
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if len(rows) < 2:
        raise DataError(f"{path}: no data rows")
    body = rows[1:]
    try:
        x = np.array([[float(v) for v in r[:-1]] for r in body], dtype=np.float64)
        y = np.array([int(float(r[-1])) for r in body], dtype=np.int64)
    except ValueError as e:
        raise DataError(f"{path}: {e}") from None
    k = class_count if class_count is not None else int(y.max()) + 1
    return Dataset(x, y, max(k, 2), name or Path(path).stem)


def _balanced_counts(n: int, k: int) -> list[int]:
    return [n // k + (1 if i < n % k else 0) for i in range(k)]


def gen_synthetic(kind: str, n: int, noise: float = 0.1, seed: int = 0,
                  class_count: int | None = None, turns: float = 1.5) -> Dataset:
    """Deterministic toy classification sets with balanced classes.

    ``gaussian_blobs`` places class centers evenly on a circle of radius 2;
    ``two_spirals`` (``class_count`` arms, default 2) wraps ``turns`` turns per arm;
    ``moons`` is the usual pair of interleaved half circles.
    """
    if kind not in SYNTHETIC_KINDS:
        raise DataError(f"unknown synthetic kind {kind!r}; expected one of {SYNTHETIC_KINDS}")
    if noise < 0:
        raise DataError(f"noise must be nonnegative, got {noise}")
    k = class_count or (3 if kind == "gaussian_blobs" else 2)
    if kind == "moons" and k != 2:
        raise DataError("moons has exactly 2 classes")
    if n < 2 * k:
        raise DataError(f"need n >= 2*class_count = {2 * k}, got {n}")
    rng = np.random.default_rng(seed)
    counts = _balanced_counts(n, k)
    xs, ys = [], []
    for c, m in enumerate(counts):
        if kind == "gaussian_blobs":
            angle = 2 * np.pi * c / k
            pts = np.tile([2 * np.cos(angle), 2 * np.sin(angle)], (m, 1))
        elif kind == "two_spirals":
            t = np.sqrt(rng.uniform(0.0, 1.0, m)) * 2 * np.pi * turns
            r = t / (2 * np.pi * turns) * 2.0
            phase = 2 * np.pi * c / k
            pts = np.stack([r * np.cos(t + phase), r * np.sin(t + phase)], axis=1)
        else:
            t = rng.uniform(0.0, np.pi, m)
            if c == 0:
                pts = np.stack([np.cos(t), np.sin(t)], axis=1)
            else:
                pts = np.stack([1 - np.cos(t), 0.5 - np.sin(t)], axis=1)
        xs.append(pts + noise * rng.standard_normal(pts.shape))
        ys.append(np.full(m, c))
    x = np.concatenate(xs)
    y = np.concatenate(ys)
    order = rng.permutation(n)
    return Dataset(x[order], y[order], k, f"{kind}-n{n}-noise{noise}-seed{seed}")


BUNDLED_TASK = {"kind": "two_spirals", "n": 5000, "noise": 0.1, "seed": 0}


def bundled_task(**overrides) -> Dataset:
    """The default desk-scale task: 5000 two-arm spiral points, 1.5 turns, noise 0.1."""
    return gen_synthetic(**{**BUNDLED_TASK, **overrides})


def split(data: Dataset, val_fraction: float, seed: int = 0) -> tuple[Dataset, Dataset]:
    if not 0 < val_fraction < 1:
        raise DataError(f"val_fraction must lie in (0, 1), got {val_fraction}")
    n = len(data)
    n_val = int(round(n * val_fraction))
    if n_val < 1 or n_val >= n:
        raise DataError(f"val_fraction {val_fraction} leaves an empty split for {n} samples")
    perm = np.random.default_rng(seed).permutation(n)
    val_idx = np.sort(perm[:n_val])
    train_idx = np.sort(perm[n_val:])
    return data.subset(train_idx, f"{data.name}/train"), data.subset(val_idx, f"{data.name}/val")


def epoch_permutation(n: int, shuffle_seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([shuffle_seed, epoch]).permutation(n)


def batch_indices(n: int, plan: BatchPlan, epoch: int) -> list[np.ndarray]:
    perm = epoch_permutation(n, plan.shuffle_seed, epoch)
    out = [perm[i:i + plan.tbs] for i in range(0, n, plan.tbs)]
    if plan.drop_last and out and len(out[-1]) < plan.tbs:
        out.pop()
    return out


def batch_iter(data: Dataset, plan: BatchPlan, epoch: int) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Yield ``(features, labels)`` batches in the order fixed by (seed, epoch)."""
    if plan.tbs < 1 or plan.tbs > len(data):
        raise DataError(f"batch size {plan.tbs} invalid for {len(data)} samples")
    for idx in batch_indices(len(data), plan, epoch):
        yield data.features[idx], data.labels[idx]
