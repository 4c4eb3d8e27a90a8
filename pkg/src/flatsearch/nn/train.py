from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from ..errors import DivergenceError
from ..search_space import NetworkConfig
from .data import LabeledDataset
from .network import loss_and_grad, predict

OPTIMIZERS = ("sgd", "asam")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    momentum: float = 0.9
    batch_size: int = 128
    weight_decay: float = 0.0005
    epochs: int = 30
    optimizer: str = "asam"
    rho: float = 2.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.learning_rate <= 0 or self.rho < 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError(f"invalid training config {self}")

    def to_dict(self) -> dict:
        return asdict(self)


def asam_perturbation(w: np.ndarray, g: np.ndarray, rho: float) -> np.ndarray:
    """Adaptive ascent step ``rho * |w|^2 g / ||(|w| g)||``; zero when the norm vanishes."""
    tg = np.abs(w) * g
    norm = np.sqrt(np.dot(tg, tg))
    if rho == 0 or norm < 1e-12:
        return np.zeros_like(w)
    return rho * np.abs(w) * tg / norm


def train(w: np.ndarray, config: NetworkConfig, data: LabeledDataset, tc: TrainConfig,
          on_step: Callable[[int, np.ndarray], None] | None = None) -> np.ndarray:
    """Mini-batch training with L2 weight decay and heavy-ball momentum.

    With ``tc.optimizer == "asam"`` each step first moves to ``w + eps`` along
    the adaptive sharpness direction and descends with the gradient found
    there. ``on_step`` sees the weights after every update.
    """
    w = np.array(w, dtype=np.float64, copy=True)
    buf = np.zeros_like(w)
    rng = np.random.default_rng(tc.rng_seed)
    n = len(data)
    step = 0
    # overflow is reported as DivergenceError below, not as numpy warnings
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(tc.epochs):
            order = rng.permutation(n)
            for start in range(0, n, tc.batch_size):
                idx = order[start:start + tc.batch_size]
                x, y = data.inputs[idx], data.labels[idx]
                loss, g = loss_and_grad(w, config, x, y)
                if not np.isfinite(loss):
                    raise DivergenceError(step, loss)
                if tc.optimizer == "asam" and tc.rho > 0:
                    eps = asam_perturbation(w, g, tc.rho)
                    if eps.any():
                        loss, g = loss_and_grad(w + eps, config, x, y)
                        if not np.isfinite(loss):
                            raise DivergenceError(step, loss)
                g = g + tc.weight_decay * w
                buf = tc.momentum * buf + g
                w = w - tc.learning_rate * buf
                if not np.all(np.isfinite(w)):
                    raise DivergenceError(step, float("nan"))
                step += 1
                if on_step is not None:
                    on_step(step, w)
    return w


def eval_error(w: np.ndarray, config: NetworkConfig, data: LabeledDataset) -> float:
    """Top-1 error: share of samples whose argmax logit misses the label."""
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    return float(np.mean(predict(w, config, data.inputs) != data.labels))
