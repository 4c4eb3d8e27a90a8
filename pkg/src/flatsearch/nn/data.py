"""Labeled image sets: synthetic rings, CIFAR binary batches, resampling."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from ..errors import ShapeError

CIFAR_SIDE = 32


@dataclass(frozen=True)
class LabeledDataset:
    inputs: np.ndarray  # (n, channels, h, w), values in [0, 1]
    labels: np.ndarray  # (n,) int
    split: str = "train"

    def __post_init__(self):
        if self.inputs.ndim != 4 or self.inputs.shape[2] != self.inputs.shape[3]:
            raise ShapeError(f"expected square (n, c, h, w) inputs, got {self.inputs.shape}")
        if self.labels.shape != (self.inputs.shape[0],):
            raise ShapeError("one label per image required")

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def resolution(self) -> int:
        return int(self.inputs.shape[2])

    def subset(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.inputs[idx], self.labels[idx], self.split)


def _area_matrix(src: int, dst: int) -> np.ndarray:
    """Row-stochastic (dst, src) matrix averaging source pixels by overlap."""
    m = np.zeros((dst, src))
    scale = src / dst
    for i in range(dst):
        lo, hi = i * scale, (i + 1) * scale
        for j in range(int(np.floor(lo)), min(int(np.ceil(hi)), src)):
            m[i, j] = min(hi, j + 1) - max(lo, j)
    return m / m.sum(axis=1, keepdims=True)


def area_resize(images: np.ndarray, size: int) -> np.ndarray:
    """Resample (..., h, w) images to (size, size) by exact area averaging."""
    h = images.shape[-1]
    if h == size:
        return images.copy()
    m = _area_matrix(h, size)
    return np.einsum("ij,...jk,lk->...il", m, images, m)


def make_rings(n: int, resolution: int, seed: int, split: str = "train",
               channels: int = 3, noise: float = 0.08, threshold: float = 0.55,
               label_noise: float = 0.0) -> LabeledDataset:
    """Two-class ring images labeled by band thickness.

    Each image holds one ring whose band covers a fraction ``t ~ U(0.15, 1)``
    of its radius (``t = 1`` is a filled disk). Label 1 iff ``t >= threshold``,
    so the class boundary has samples arbitrarily close to it. Scenes are
    rendered from continuous coordinates with 4x supersampling, so the same
    seed gives the same scene at every resolution. ``label_noise`` flips that
    fraction of labels after rendering.
    """
    rng = np.random.default_rng(seed)
    cx, cy = rng.uniform(0.35, 0.65, (2, n))
    radius = rng.uniform(0.2, 0.32, n)
    thickness = rng.uniform(0.15, 1.0, n)
    labels = (thickness >= threshold).astype(np.int64)
    color = rng.uniform(0.55, 1.0, (n, channels))
    background = rng.uniform(0.0, 0.35, (n, channels))

    ss = 4
    t = (np.arange(resolution * ss) + 0.5) / (resolution * ss)
    gy, gx = np.meshgrid(t, t, indexing="ij")
    images = np.empty((n, channels, resolution, resolution))
    for i in range(n):
        d = np.hypot(gx - cx[i], gy - cy[i])
        inside = (d <= radius[i]) & (d >= radius[i] * (1.0 - thickness[i]))
        cover = inside.reshape(resolution, ss, resolution, ss).mean(axis=(1, 3))
        images[i] = background[i][:, None, None] + cover * (color[i] - background[i])[:, None, None]
    # pixel noise drawn at a fixed base grid keeps scenes resolution-independent
    base = rng.normal(0.0, noise, (n, channels, CIFAR_SIDE, CIFAR_SIDE))
    images += area_resize(base, resolution) if resolution != CIFAR_SIDE else base
    flip = rng.random(n) < label_noise
    labels = np.where(flip, 1 - labels, labels)
    return LabeledDataset(np.clip(images, 0.0, 1.0), labels, split)


def make_random_labels(n: int, resolution: int, num_classes: int, seed: int,
                       channels: int = 3) -> LabeledDataset:
    rng = np.random.default_rng(seed)
    return LabeledDataset(rng.random((n, channels, resolution, resolution)),
                          rng.integers(0, num_classes, n).astype(np.int64))


def read_cifar_binary(paths: Iterable[str | Path], resolution: int | None = None,
                      side: int = CIFAR_SIDE, split: str = "train") -> LabeledDataset:
    """Read records of one label byte plus ``3 * side * side`` row-major RGB bytes."""
    record = 1 + 3 * side * side
    chunks = []
    for path in paths:
        raw = np.fromfile(path, dtype=np.uint8)
        if raw.size % record:
            raise ShapeError(f"{path}: size {raw.size} is not a multiple of {record}")
        chunks.append(raw.reshape(-1, record))
    raw = np.concatenate(chunks)
    labels = raw[:, 0].astype(np.int64)
    images = raw[:, 1:].reshape(-1, 3, side, side).astype(np.float64) / 255.0
    if resolution is not None and resolution != side:
        images = area_resize(images, resolution)
    return LabeledDataset(images, labels, split)


def write_cifar_binary(data: LabeledDataset, path: str | Path) -> None:
    if data.inputs.shape[1] != 3:
        raise ShapeError("CIFAR layout stores exactly 3 channels")
    if data.labels.max(initial=0) > 255:
        raise ShapeError("labels must fit in one byte")
    pixels = np.round(np.clip(data.inputs, 0.0, 1.0) * 255.0).astype(np.uint8)
    out = np.concatenate([data.labels.astype(np.uint8)[:, None], pixels.reshape(len(data), -1)], axis=1)
    out.tofile(path)
