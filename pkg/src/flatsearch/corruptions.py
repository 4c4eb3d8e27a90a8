"""Synthetic image corruptions at five severities and the corruption-error summary."""
from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy import ndimage

from .errors import ShapeError, UnsupportedCorruption
from .nn.data import LabeledDataset, area_resize, write_cifar_binary
from .nn.train import eval_error
from .search_space import NetworkConfig

SEVERITIES = (1, 2, 3, 4, 5)

# A parameter of 0 is the identity for every type; larger is harsher.
DEFAULT_SEVERITIES: dict[str, tuple[float, ...]] = {
    "gaussian_noise": (0.04, 0.08, 0.12, 0.18, 0.26),  # noise std
    "shot_noise": (1 / 60, 1 / 25, 1 / 12, 1 / 5, 1 / 3),  # 1 / photon count
    "impulse_noise": (0.01, 0.02, 0.03, 0.05, 0.07),  # flipped pixel share
    "gaussian_blur": (0.4, 0.6, 0.7, 0.8, 1.0),  # sigma in pixels at 32 px
    "contrast": (0.25, 0.5, 0.6, 0.7, 0.85),  # 1 - contrast factor
    "brightness": (0.05, 0.1, 0.15, 0.2, 0.3),  # HSV value shift
    "pixelate": (0.05, 0.1, 0.15, 0.25, 0.35),  # 1 - downscale factor
    "elastic_lite": (0.01, 0.02, 0.03, 0.045, 0.06),  # peak displacement / side
}
STOCHASTIC = frozenset({"gaussian_noise", "shot_noise", "impulse_noise", "elastic_lite"})


def check_table(table: Mapping[str, Sequence[float]]) -> None:
    for name, params in table.items():
        if len(params) != len(SEVERITIES):
            raise ValueError(f"{name}: need {len(SEVERITIES)} severity parameters")
        if any(p <= 0 for p in params) or any(b <= a for a, b in zip(params, params[1:])):
            raise ValueError(f"{name}: severity parameters must be positive and strictly increasing")


check_table(DEFAULT_SEVERITIES)


def _gaussian_noise(x, p, rng):
    return x + rng.normal(0.0, p, x.shape)


def _shot_noise(x, p, rng):
    photons = 1.0 / p
    return rng.poisson(x * photons) / photons


def _impulse_noise(x, p, rng):
    u = rng.random(x.shape)
    out = x.copy()
    out[u < p / 2] = 0.0
    out[(u >= p / 2) & (u < p)] = 1.0
    return out


def _gaussian_blur(x, p, rng):
    sigma = p * x.shape[-1] / 32.0
    return ndimage.gaussian_filter(x, sigma=(0,) * (x.ndim - 2) + (sigma, sigma), mode="reflect")


def _contrast(x, p, rng):
    mean = x.mean(axis=(-3, -2, -1), keepdims=True)
    return (x - mean) * (1.0 - p) + mean


def _brightness(x, p, rng):
    # shift HSV value; scaling RGB by V'/V keeps hue and saturation
    v = x.max(axis=-3, keepdims=True)
    v_new = np.clip(v + p, 0.0, 1.0)
    scale = np.divide(v_new, v, out=np.ones_like(v), where=v > 0)
    return np.where(v > 0, x * scale, v_new)


def _pixelate(x, p, rng):
    side = x.shape[-1]
    small = max(1, int(round(side * (1.0 - p))))
    if small == side:
        return x.copy()
    low = area_resize(x, small)
    idx = np.arange(side) * small // side
    return low[..., idx[:, None], idx[None, :]]


def _elastic_lite(x, p, rng):
    side = x.shape[-1]
    field_ = ndimage.gaussian_filter(rng.standard_normal((2, side, side)), sigma=(0, side / 8, side / 8))
    field_ *= p * side / max(np.abs(field_).max(), 1e-12)
    gy, gx = np.meshgrid(np.arange(side, dtype=float), np.arange(side, dtype=float), indexing="ij")
    coords = np.stack([gy + field_[0], gx + field_[1]])
    flat = x.reshape(-1, side, side)
    out = np.stack([ndimage.map_coordinates(ch, coords, order=1, mode="reflect") for ch in flat])
    return out.reshape(x.shape)


CORRUPTIONS: dict[str, Callable[[np.ndarray, float, np.random.Generator], np.ndarray]] = {
    "gaussian_noise": _gaussian_noise,
    "shot_noise": _shot_noise,
    "impulse_noise": _impulse_noise,
    "gaussian_blur": _gaussian_blur,
    "contrast": _contrast,
    "brightness": _brightness,
    "pixelate": _pixelate,
    "elastic_lite": _elastic_lite,
}
TYPES = tuple(CORRUPTIONS)


def register(name: str, fn, params: Sequence[float], stochastic: bool = True) -> None:
    """Add a corruption type; ``fn(images, param, rng)`` must be the identity at ``param == 0``."""
    global STOCHASTIC, TYPES
    check_table({name: params})
    CORRUPTIONS[name] = fn
    DEFAULT_SEVERITIES[name] = tuple(params)
    if stochastic:
        STOCHASTIC = STOCHASTIC | {name}
    TYPES = tuple(CORRUPTIONS)


def _lookup(kind: str):
    try:
        return CORRUPTIONS[kind]
    except KeyError:
        raise UnsupportedCorruption(kind) from None


@dataclass(frozen=True)
class CorruptionSpec:
    type: str
    severity: int
    rng_seed: int = 0
    table: Mapping[str, Sequence[float]] | None = None

    def __post_init__(self):
        _lookup(self.type)
        if self.severity not in SEVERITIES:
            raise ValueError(f"severity must be in 1..5, got {self.severity}")
        if self.table is not None:
            check_table({self.type: self.table[self.type]})

    @property
    def param(self) -> float:
        table = self.table if self.table is not None else DEFAULT_SEVERITIES
        return float(table[self.type][self.severity - 1])


def apply_corruption(images: np.ndarray, kind: str, param: float, rng_seed=0) -> np.ndarray:
    """Corrupt ``(..., c, h, w)`` images with an explicit parameter, clamped to [0, 1]."""
    fn = _lookup(kind)
    images = np.asarray(images, dtype=np.float64)
    if images.ndim < 3 or images.shape[-1] != images.shape[-2]:
        raise ShapeError(f"expected (..., c, h, w) square images, got {images.shape}")
    if param == 0:
        return images.copy()
    return np.clip(fn(images, param, np.random.default_rng(rng_seed)), 0.0, 1.0)


def corrupt(image: np.ndarray, spec: CorruptionSpec) -> np.ndarray:
    return apply_corruption(image, spec.type, spec.param, spec.rng_seed)


def _image_seed(seed: int, kind: str, severity: int, index: int) -> list[int]:
    return [seed, zlib.crc32(kind.encode()), severity, index]


def build_corrupted_sets(test: LabeledDataset, types: Sequence[str], seed: int,
                         table: Mapping[str, Sequence[float]] | None = None
                         ) -> dict[tuple[str, int], LabeledDataset]:
    """One corrupted copy of ``test`` per (type, severity), at the test set's own resolution."""
    if len(test) == 0:
        raise ValueError("cannot corrupt an empty test set")
    out = {}
    for kind in types:
        _lookup(kind)
        for sev in SEVERITIES:
            spec = CorruptionSpec(kind, sev, seed, table)
            if kind in STOCHASTIC:
                images = np.stack([apply_corruption(img, kind, spec.param, _image_seed(seed, kind, sev, i))
                                   for i, img in enumerate(test.inputs)])
            else:
                images = apply_corruption(test.inputs, kind, spec.param)
            out[(kind, sev)] = LabeledDataset(images, test.labels.copy(), f"{test.split}-{kind}-{sev}")
    return out


def save_corrupted_sets(sets: Mapping[tuple[str, int], LabeledDataset], out_dir: str | Path) -> list[Path]:
    """Write each set in the CIFAR binary layout as ``<type>_s<severity>.bin``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for (kind, sev), data in sorted(sets.items()):
        path = out_dir / f"{kind}_s{sev}.bin"
        write_cifar_binary(data, path)
        paths.append(path)
    return paths


@dataclass
class CorruptionReport:
    types: tuple[str, ...]
    errors: np.ndarray  # (severity, type); NaN where a cell was not evaluated
    clean_error: float
    model_id: str = ""
    resolution: int = 0
    dataset_id: str = ""
    ce_per_type: np.ndarray = field(init=False)
    mce: float = field(init=False)

    def __post_init__(self):
        self.errors = np.asarray(self.errors, dtype=float)
        if self.errors.shape != (len(SEVERITIES), len(self.types)):
            raise ShapeError(f"error matrix must be (5, {len(self.types)})")
        present = self.errors[~np.isnan(self.errors)]
        if np.any((present < 0) | (present > 1)):
            raise ValueError("corruption errors must lie in [0, 1]")
        counts = (~np.isnan(self.errors)).sum(axis=0)
        sums = np.nansum(self.errors, axis=0)
        self.ce_per_type = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
        filled = self.ce_per_type[~np.isnan(self.ce_per_type)]
        self.mce = float(filled.mean()) if filled.size else float("nan")

    def error(self, kind: str, severity: int) -> float:
        return float(self.errors[severity - 1, self.types.index(kind)])

    def to_dict(self) -> dict:
        nan_none = lambda a: [None if np.isnan(v) else float(v) for v in a]
        return {
            "model_id": self.model_id, "resolution": self.resolution, "dataset_id": self.dataset_id,
            "types": list(self.types), "clean_error": self.clean_error,
            "errors": [nan_none(row) for row in self.errors],
            "ce_per_type": dict(zip(self.types, nan_none(self.ce_per_type))),
            "mce": None if np.isnan(self.mce) else self.mce,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "CorruptionReport":
        errors = np.array([[np.nan if v is None else v for v in row] for row in d["errors"]], dtype=float)
        return cls(tuple(d["types"]), errors, d["clean_error"], d.get("model_id", ""),
                   d.get("resolution", 0), d.get("dataset_id", ""))

    def curve_rows(self) -> list[tuple[str, str, int, float]]:
        """(model, type, severity, error) rows, one per evaluated cell."""
        return [(self.model_id, kind, sev, float(self.errors[sev - 1, j]))
                for j, kind in enumerate(self.types) for sev in SEVERITIES
                if not np.isnan(self.errors[sev - 1, j])]


def corruption_report(w: np.ndarray, config: NetworkConfig, sets: Mapping[tuple[str, int], LabeledDataset],
                      clean_error: float, model_id: str = "", dataset_id: str = "") -> CorruptionReport:
    """Top-1 error on each corrupted set; CE per type is the mean over severities."""
    for key, data in sets.items():
        if data.resolution != config.input_resolution:
            raise ShapeError(f"set {key} has resolution {data.resolution}, model expects "
                             f"{config.input_resolution}")
    present = {kind for kind, _ in sets}
    types = tuple(t for t in TYPES if t in present) + tuple(sorted(present - set(TYPES)))
    errors = np.full((len(SEVERITIES), len(types)), np.nan)
    for (kind, sev), data in sets.items():
        errors[sev - 1, types.index(kind)] = eval_error(w, config, data)
    return CorruptionReport(types, errors, float(clean_error), model_id, config.input_resolution, dataset_id)
