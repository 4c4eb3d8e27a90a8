"""Figures of merit: weight-perturbation robustness, F_AR and the penalized parameter objective."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import EmptyArchive
from .nn.data import LabeledDataset
from .nn.train import eval_error
from .search_space import NetworkConfig

GAMMA_FALLBACK = 1.0
ROBUSTNESS_SUBSAMPLE = 2048


@dataclass(frozen=True)
class EvalRecord:
    gene: tuple[int, ...]
    top1_accuracy: float
    robustness: float
    param_count: int
    sigma: float
    optimizer: str
    seed: int
    wall_clock_seconds: float = 0.0
    failed: bool = False

    def __post_init__(self):
        object.__setattr__(self, "gene", tuple(int(v) for v in self.gene))
        if not 0.0 <= self.top1_accuracy <= 1.0:
            raise ValueError(f"top1_accuracy {self.top1_accuracy} outside [0, 1]")
        if self.param_count <= 0 or self.sigma < 0:
            raise ValueError("param_count must be positive and sigma non-negative")

    @property
    def params_millions(self) -> float:
        return self.param_count / 1e6

    def to_json(self) -> str:
        d = asdict(self)
        d["gene"] = list(self.gene)
        return json.dumps(d, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "EvalRecord":
        return cls(**json.loads(line))


@dataclass(frozen=True)
class FomConfig:
    alpha: float = 0.5
    sigma: float = 0.05
    samples: int = 20
    param_limit: float = 4.0  # millions
    penalty: float = 10.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.samples < 1 or self.penalty < 0 or self.param_limit <= 0 or self.sigma < 0:
            raise ValueError(f"invalid figure-of-merit config {self}")

    def to_dict(self) -> dict:
        return asdict(self)


def perturbation_robustness(w: np.ndarray, error_fn: Callable[[np.ndarray], float],
                            sigma: float, samples: int, rng_seed) -> float:
    """Mean increase of ``error_fn`` under multiplicative noise ``w + sigma * z * w``.

    Each draw gets its own child seed, so draws are independent of evaluation order.
    """
    if samples < 1 or sigma < 0:
        raise ValueError("need samples >= 1 and sigma >= 0")
    w = np.asarray(w, dtype=np.float64)
    base = error_fn(w)
    children = np.random.SeedSequence(rng_seed).spawn(samples)
    deltas = []
    for child in children:
        z = np.random.default_rng(child).standard_normal(w.shape)
        deltas.append(error_fn(w + sigma * z * w) - base)
    return float(np.mean(deltas))


def robustness(w: np.ndarray, config: NetworkConfig, train_data: LabeledDataset, sigma: float,
               samples: int, rng_seed, subsample: int = ROBUSTNESS_SUBSAMPLE) -> float:
    """Perturbation robustness measured with top-1 error on (a seeded subsample of) training data."""
    if len(train_data) > subsample:
        pick = np.random.default_rng([rng_seed, 1]).choice(len(train_data), subsample, replace=False)
        train_data = train_data.subset(np.sort(pick))
    return perturbation_robustness(w, lambda v: eval_error(v, config, train_data),
                                   sigma, samples, [rng_seed, 2])


def gamma(archive: Sequence[EvalRecord]) -> float:
    """Ratio of summed accuracies to summed robustness over the archive."""
    if len(archive) == 0:
        raise EmptyArchive("gamma needs at least one record")
    acc = sum(r.top1_accuracy for r in archive)
    rob = sum(r.robustness for r in archive)
    if rob <= 1e-9:
        return GAMMA_FALLBACK
    return acc / rob


def f_ar(top1_accuracy: float, robustness: float, alpha: float, gamma: float) -> float:
    return alpha * (1.0 - top1_accuracy) + gamma * (1.0 - alpha) * robustness


def f_cp(param_count_millions: float, param_limit: float, penalty: float) -> float:
    return param_count_millions + max(0.0, param_count_millions - param_limit) * penalty


def record_objectives(record: EvalRecord, fom: FomConfig, gamma_value: float) -> tuple[float, float]:
    """True (F_AR, F_CP) of an evaluated record."""
    return (f_ar(record.top1_accuracy, record.robustness, fom.alpha, gamma_value),
            f_cp(record.params_millions, fom.param_limit, fom.penalty))
