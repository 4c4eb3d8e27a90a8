"""Regressors predicting F_AR from normalized genes, and Kendall's-tau model selection."""
from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.spatial.distance import cdist, pdist

from .errors import InsufficientData, NaNCorrelation, ShapeError
from .objectives import EvalRecord, FomConfig, f_ar
from .search_space import SearchSpaceDef, normalize

KINDS = ("rbf", "gp", "ridge", "knn")  # also the tie-break order
RBF_JITTER = 1e-8
GP_NOISE = 1e-6
RIDGE_LAMBDA = 1e-3
KNN_K = 5
CV_FOLDS = 5
MIN_ARCHIVE = 8


def kendall_tau(a: Sequence[float], b: Sequence[float]) -> float:
    """Tie-adjusted tau-b. Raises :class:`NaNCorrelation` if either input is fully tied."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ShapeError("kendall_tau needs two 1-D sequences of equal length")
    n = a.size
    if n < 2:
        raise ShapeError("kendall_tau needs at least two observations")
    iu = np.triu_indices(n, k=1)
    sa = np.sign(a[:, None] - a[None, :])[iu]
    sb = np.sign(b[:, None] - b[None, :])[iu]
    n0 = n * (n - 1) // 2
    untied_a = n0 - int(np.sum(sa == 0))
    untied_b = n0 - int(np.sum(sb == 0))
    if untied_a == 0 or untied_b == 0:
        raise NaNCorrelation("all values tied in one input")
    return float(np.sum(sa * sb) / np.sqrt(float(untied_a) * float(untied_b)))


def _dedupe(X: np.ndarray, y: np.ndarray):
    """Merge repeated feature rows, averaging their targets."""
    uniq, inverse = np.unique(X, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    sums = np.zeros(len(uniq))
    np.add.at(sums, inverse, y)
    return uniq, sums / np.bincount(inverse)


def _tps(r: np.ndarray) -> np.ndarray:
    out = np.zeros_like(r)
    nz = r > 0
    out[nz] = r[nz] ** 2 * np.log(r[nz])
    return out


class SurrogateModel:
    kind = ""

    def __init__(self):
        self.dim = None
        self.cv_tau: dict[str, float] | None = None

    def fit(self, X, y) -> "SurrogateModel":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float)
        if X.shape[0] != y.shape[0]:
            raise ShapeError("one target per feature vector required")
        if len(np.unique(X, axis=0)) < 2:
            raise InsufficientData("surrogates need at least two distinct feature vectors")
        self.dim = X.shape[1]
        self._fit(X, y)
        return self

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if self.dim is None:
            raise RuntimeError("model is not fitted")
        if X.shape[1] != self.dim:
            raise ShapeError(f"feature length {X.shape[1]}, model expects {self.dim}")
        out = self._predict(X)
        return float(out[0]) if single else out

    def _fit(self, X, y):
        raise NotImplementedError

    def _predict(self, X):
        raise NotImplementedError


class RBFModel(SurrogateModel):
    """Thin-plate spline interpolant with a constant tail."""

    kind = "rbf"

    def _fit(self, X, y):
        X, y = _dedupe(X, y)
        n = len(X)
        self.mean = y.mean()
        A = np.zeros((n + 1, n + 1))
        A[:n, :n] = _tps(cdist(X, X)) + RBF_JITTER * np.eye(n)
        A[:n, n] = A[n, :n] = 1.0
        rhs = np.append(y - self.mean, 0.0)
        sol = np.linalg.lstsq(A, rhs, rcond=None)[0]
        self.centers, self.coef, self.offset = X, sol[:n], sol[n]

    def _predict(self, X):
        return _tps(cdist(X, self.centers)) @ self.coef + self.offset + self.mean


class GPModel(SurrogateModel):
    """Squared-exponential GP posterior mean around the empirical target mean."""

    kind = "gp"

    def _fit(self, X, y):
        X, y = _dedupe(X, y)
        self.mean = y.mean()
        self.length = float(np.median(pdist(X))) or 1.0
        self.X = X
        K = self._kernel(X, X) + GP_NOISE * np.eye(len(X))
        self.chol = cho_factor(K, lower=True)
        self.alpha = cho_solve(self.chol, y - self.mean)

    def _kernel(self, A, B):
        return np.exp(-cdist(A, B, "sqeuclidean") / (2.0 * self.length ** 2))

    def _predict(self, X):
        return self._kernel(X, self.X) @ self.alpha + self.mean

    def predict_std(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        ks = self._kernel(X, self.X)
        var = 1.0 - np.einsum("ij,ji->i", ks, cho_solve(self.chol, ks.T))
        return np.sqrt(np.maximum(var, 0.0))


class RidgeModel(SurrogateModel):
    kind = "ridge"

    def _fit(self, X, y):
        self.x_mean = X.mean(axis=0)
        self.y_mean = y.mean()
        Xc = X - self.x_mean
        self.beta = np.linalg.solve(Xc.T @ Xc + RIDGE_LAMBDA * np.eye(X.shape[1]), Xc.T @ (y - self.y_mean))

    def _predict(self, X):
        return (X - self.x_mean) @ self.beta + self.y_mean


class KNNModel(SurrogateModel):
    """Inverse-distance weighted mean of the k = min(5, n) nearest training points."""

    kind = "knn"

    def _fit(self, X, y):
        self.X, self.y = X, y
        self.k = min(KNN_K, len(X))

    def _predict(self, X):
        d = cdist(X, self.X)
        out = np.empty(len(X))
        for i, row in enumerate(d):
            nearest = np.argsort(row, kind="stable")[: self.k]
            dist = row[nearest]
            exact = dist < 1e-12
            if exact.any():
                out[i] = self.y[nearest[exact]].mean()
            else:
                wts = 1.0 / dist
                out[i] = wts @ self.y[nearest] / wts.sum()
        return out


_CLASSES = {cls.kind: cls for cls in (RBFModel, GPModel, RidgeModel, KNNModel)}


def fit(kind: str, features, targets) -> SurrogateModel:
    try:
        cls = _CLASSES[kind]
    except KeyError:
        raise ValueError(f"unknown surrogate kind {kind!r}; choose from {KINDS}") from None
    return cls().fit(features, targets)


def predict(model: SurrogateModel, features) -> float | np.ndarray:
    return model.predict(features)


def cross_validated_tau(kind: str, X: np.ndarray, y: np.ndarray, folds: list[np.ndarray]) -> float:
    """Mean held-out tau over folds with at least two members.

    A fold whose predictions are all tied contributes 0 (no ranking information).
    """
    scores = []
    for held in folds:
        if len(held) < 2:
            continue
        train_idx = np.setdiff1d(np.arange(len(y)), held)
        try:
            pred = fit(kind, X[train_idx], y[train_idx]).predict(X[held])
            scores.append(kendall_tau(pred, y[held]))
        except (NaNCorrelation, InsufficientData):
            scores.append(0.0)
    return float(np.mean(scores)) if scores else 0.0


def archive_targets(archive: Sequence[EvalRecord], fom: FomConfig, gamma: float) -> np.ndarray:
    return np.array([f_ar(r.top1_accuracy, r.robustness, fom.alpha, gamma) for r in archive])


def adaptive_switch(archive: Sequence[EvalRecord], fom: FomConfig, gamma: float,
                    space: SearchSpaceDef, rng_seed) -> SurrogateModel:
    """Pick the kind with the best 5-fold Kendall's tau on F_AR and refit it on the whole archive.

    The returned model carries the per-kind scores in ``cv_tau``.
    """
    if len(archive) < MIN_ARCHIVE:
        raise InsufficientData(f"adaptive switching needs >= {MIN_ARCHIVE} records, got {len(archive)}")
    X = np.array([normalize(space, r.gene) for r in archive])
    y = archive_targets(archive, fom, gamma)
    order = np.random.default_rng(rng_seed).permutation(len(y))
    folds = np.array_split(order, CV_FOLDS)
    scores = {kind: cross_validated_tau(kind, X, y, folds) for kind in KINDS}
    best = max(KINDS, key=lambda k: (scores[k], -KINDS.index(k)))
    model = fit(best, X, y)
    model.cv_tau = scores
    return model
