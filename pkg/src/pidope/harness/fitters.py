"""Outcome-model fitters used by the experiment harness.

The core library takes any vector of fitted values; these are convenience
fitters for simulations. Each returns a :class:`FittedModel` that also knows
a Lipschitz constant for its own prediction function when one is available.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from sklearn.linear_model import LogisticRegression

from ..data import LoggedDataset, MuHat

FITTERS = ("ridge", "logistic", "knn")


@dataclass(frozen=True)
class FittedModel:
    predict: Callable[[np.ndarray], np.ndarray]
    # Euclidean Lipschitz constant of predict on R^p; None when not known
    lipschitz: Optional[float]
    kind: str


def _constant(value: float, kind: str) -> FittedModel:
    return FittedModel(lambda X: np.full(np.asarray(X).shape[0], value), 0.0, kind)


def fit_ridge(X: np.ndarray, y: np.ndarray, penalty: float = 1.0) -> FittedModel:
    """Ridge regression on standardized features with an unpenalized intercept."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        return _constant(0.0, "ridge")
    center = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    Z = (X - center) / scale
    ybar = y.mean()
    gram = Z.T @ Z + penalty * np.eye(Z.shape[1])
    beta = np.linalg.solve(gram, Z.T @ (y - ybar))
    coef = beta / scale
    intercept = ybar - center @ coef
    return FittedModel(lambda Q: np.asarray(Q, dtype=float) @ coef + intercept,
                       float(np.linalg.norm(coef)), "ridge")


def fit_logistic(X: np.ndarray, y: np.ndarray, C: float = 1.0) -> FittedModel:
    """L2-regularized logistic regression for outcomes in [0, 1].

    Fractional outcomes are handled by splitting each row into a positive and
    a negative copy weighted by y and 1 - y.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        return _constant(0.5, "logistic")
    if np.any((y < 0) | (y > 1)):
        raise ValueError("logistic fitter needs outcomes in [0, 1]")
    if np.all(y == y[0]) and y[0] in (0.0, 1.0):
        return _constant(float(y[0]), "logistic")
    Xs = np.vstack([X, X])
    ys = np.concatenate([np.ones(y.size), np.zeros(y.size)])
    ws = np.concatenate([y, 1.0 - y])
    keep = ws > 0
    model = LogisticRegression(C=C, max_iter=1000)
    model.fit(Xs[keep], ys[keep], sample_weight=ws[keep])
    w = model.coef_.ravel().copy()
    b = float(model.intercept_[0])

    def predict(Q):
        z = np.asarray(Q, dtype=float) @ w + b
        return 1.0 / (1.0 + np.exp(-z))

    # sigmoid' <= 1/4
    return FittedModel(predict, float(np.linalg.norm(w)) / 4.0, "logistic")


def fit_knn(X: np.ndarray, y: np.ndarray, k: int = 5) -> FittedModel:
    """Average of the k nearest training outcomes; deliberately rough."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        return _constant(0.0, "knn")
    k = min(k, y.size)

    def predict(Q):
        Q = np.asarray(Q, dtype=float)
        out = np.empty(Q.shape[0])
        for start in range(0, Q.shape[0], 1024):
            q = Q[start:start + 1024]
            d2 = ((q[:, None, :] - X[None, :, :]) ** 2).sum(axis=2)
            nn = np.argpartition(d2, k - 1, axis=1)[:, :k]
            out[start:start + 1024] = y[nn].mean(axis=1)
        return out

    return FittedModel(predict, None, "knn")


def fit_model(kind: str, X: np.ndarray, y: np.ndarray, **kwargs) -> FittedModel:
    if kind == "ridge":
        return fit_ridge(X, y, **kwargs)
    if kind == "logistic":
        return fit_logistic(X, y, **kwargs)
    if kind == "knn":
        return fit_knn(X, y, **kwargs)
    raise ValueError(f"unknown fitter {kind!r}; expected one of {FITTERS}")


def fit_mu(data: LoggedDataset, kind: str = "ridge", **kwargs) -> tuple[MuHat, FittedModel]:
    """Fit on rows where the action was taken and predict at every row."""
    taken = data.action_taken == 1
    model = fit_model(kind, data.covariates[taken], data.outcome[taken], **kwargs)
    values = model.predict(data.covariates)
    if not np.all(np.isfinite(values)):
        raise ValueError(f"{kind} fit produced non-finite predictions")
    return MuHat(values), model


def lipschitz_ok(model: FittedModel, L: float) -> bool:
    """True when the fitted function is known to be L-Lipschitz everywhere."""
    return model.lipschitz is not None and (math.isinf(L) or model.lipschitz <= L)
