"""Multiclass classification data turned into logged bandit feedback.

Each class is an action. The outcome is 1 when the logged action matches the
label. The behavior policy is a per-row class distribution with entries below
a threshold zeroed and the rest renormalized, which is what creates the
no-overlap region.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from sklearn.linear_model import LogisticRegression

from ..data import LoggedDataset

DEFAULT_THRESHOLD = 0.05


def threshold_policy(probs: np.ndarray, threshold: float = DEFAULT_THRESHOLD) -> np.ndarray:
    """Zero entries below ``threshold`` and renormalize each row."""
    P = np.asarray(probs, dtype=float)
    out = np.where(P < threshold, 0.0, P)
    s = out.sum(axis=1, keepdims=True)
    empty = s[:, 0] == 0
    if np.any(empty):
        # keep the most likely class rather than leave a row with no support
        out[empty, np.argmax(P[empty], axis=1)] = 1.0
        s = out.sum(axis=1, keepdims=True)
    return out / s


@dataclass(frozen=True, eq=False)
class ConvertedData:
    datasets: tuple  # one LoggedDataset per action
    actions: np.ndarray
    labels: np.ndarray
    eval_probs: np.ndarray
    behavior_probs: np.ndarray
    # per action: fraction of rows where the evaluation policy has no support
    unsupported: np.ndarray

    @property
    def n_actions(self) -> int:
        return len(self.datasets)

    @property
    def flags(self) -> list[str]:
        return [f"action {a}: behavior support missing on {f:.1%} of rows"
                for a, f in enumerate(self.unsupported) if f > 0]


def convert_multiclass(
    features: np.ndarray,
    labels: np.ndarray,
    eval_probs: np.ndarray,
    *,
    threshold: float = DEFAULT_THRESHOLD,
    base_probs: Optional[np.ndarray] = None,
    seed=None,
    rng: Optional[np.random.Generator] = None,
) -> ConvertedData:
    """Build one logged dataset per class.

    The behavior policy is ``threshold_policy(base_probs)``, with ``base_probs``
    defaulting to ``eval_probs``. Actions are drawn from it with a generator
    seeded by ``seed`` (or ``rng`` when given).
    """
    X = np.asarray(features, dtype=float)
    y = np.asarray(labels)
    P = np.asarray(eval_probs, dtype=float)
    if X.ndim != 2 or not np.all(np.isfinite(X)):
        raise ValueError("features must be a finite n x p matrix")
    n, K = P.shape
    if K < 2:
        raise ValueError("need at least 2 classes")
    if X.shape[0] != n or y.shape[0] != n:
        raise ValueError("features, labels and eval_probs must share n")
    if not np.allclose(P.sum(axis=1), 1.0, atol=1e-9):
        raise ValueError("evaluation probabilities must sum to 1 per row")
    if np.any((y < 0) | (y >= K)):
        raise ValueError(f"labels must lie in 0..{K - 1}")
    B = threshold_policy(P if base_probs is None else base_probs, threshold)
    if rng is None:
        rng = np.random.default_rng(seed)
    cum = np.cumsum(B, axis=1)
    u = rng.random(n)
    actions = np.minimum((u[:, None] >= cum).sum(axis=1), K - 1)
    # cumsum rounding can leave u above the last cum entry; never log a zero-probability action
    bad = B[np.arange(n), actions] == 0
    actions[bad] = np.argmax(B[bad], axis=1)
    outcome = (actions == y).astype(float)
    datasets = []
    unsupported = np.empty(K)
    for a in range(K):
        taken = (actions == a).astype(np.int8)
        datasets.append(LoggedDataset(X, B[:, a], P[:, a], taken, np.where(taken == 1, outcome, np.nan)))
        unsupported[a] = float(np.mean((B[:, a] == 0) & (P[:, a] > 0)))
    return ConvertedData(tuple(datasets), actions, y, P, B, unsupported)


def policy_value(eval_probs: np.ndarray, class_probs: np.ndarray) -> float:
    """Mean over rows of sum_a pi_e(a) P(label = a)."""
    return float(np.mean(np.sum(eval_probs * class_probs, axis=1)))


# ---------------------------------------------------------------------------
# Sources of (features, labels) with a known policy value
# ---------------------------------------------------------------------------


def softmax(Z: np.ndarray) -> np.ndarray:
    Z = Z - Z.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


@dataclass(frozen=True, eq=False)
class LogisticLabelSource:
    """Uniform covariates on [0, 1]^p with softmax class probabilities.

    The evaluation policy samples from the true class probabilities, so the
    per-class conditional mean is that probability itself. Its Lipschitz
    constant is at most max_{a,b} ||w_a - w_b|| / 4 (exact for two classes).
    """

    weights: np.ndarray  # K x p
    intercepts: np.ndarray  # K

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.weights, dtype=float))
        b = np.asarray(self.intercepts, dtype=float).reshape(-1)
        if W.shape[0] != b.size or W.shape[0] < 2:
            raise ValueError("need one weight row and intercept per class, K >= 2")
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "intercepts", b)

    @property
    def p(self) -> int:
        return self.weights.shape[1]

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def lipschitz(self) -> float:
        W = self.weights
        diffs = np.linalg.norm(W[:, None, :] - W[None, :, :], axis=2)
        return float(diffs.max()) / 4.0

    def class_probs(self, X: np.ndarray) -> np.ndarray:
        return softmax(np.asarray(X, dtype=float) @ self.weights.T + self.intercepts)

    def eval_probs(self, X: np.ndarray) -> np.ndarray:
        return self.class_probs(X)

    def sample(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        X = rng.random((n, self.p))
        P = self.class_probs(X)
        u = rng.random(n)
        y = np.minimum((u[:, None] >= np.cumsum(P, axis=1)).sum(axis=1), self.n_classes - 1)
        return X, y

    def truth(self, m: Optional[int] = None) -> float:
        """Policy value by midpoint quadrature on [0, 1]^p (p <= 3)."""
        if self.p > 3:
            raise ValueError("quadrature truth is implemented for p <= 3")
        m = m or {1: 20000, 2: 800, 3: 120}[self.p]
        g = (np.arange(m) + 0.5) / m
        G = np.stack(np.meshgrid(*([g] * self.p), indexing="ij"), axis=-1).reshape(-1, self.p)
        P = self.class_probs(G)
        return policy_value(P, P)

    def describe(self) -> dict:
        return {"kind": "logistic-labels", "weights": self.weights.tolist(),
                "intercepts": self.intercepts.tolist(), "lipschitz": self.lipschitz}


@dataclass(frozen=True, eq=False)
class ResampleSource:
    """The empirical distribution of a fixed labelled table, sampled with replacement.

    The evaluation policy is fixed per base row, so the true value is the
    exact average over base rows.
    """

    features: np.ndarray
    labels: np.ndarray
    base_eval_probs: np.ndarray

    @property
    def n_classes(self) -> int:
        return self.base_eval_probs.shape[1]

    def sample_rows(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.integers(0, self.labels.shape[0], size=n)

    def truth(self) -> float:
        onehot = np.eye(self.n_classes)[self.labels]
        return policy_value(self.base_eval_probs, onehot)

    def describe(self) -> dict:
        return {"kind": "resample", "n_base": int(self.labels.shape[0]), "n_classes": self.n_classes}


def fit_policy(features: np.ndarray, labels: np.ndarray, C: float = 1.0) -> np.ndarray:
    """Class probabilities from a logistic regression fit on the whole table."""
    model = LogisticRegression(C=C, max_iter=2000)
    model.fit(features, labels)
    P = np.zeros((features.shape[0], int(labels.max()) + 1))
    P[:, model.classes_] = model.predict_proba(features)
    return P


def make_yeast_like(n: int = 1299, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Small stand-in for the yeast table: 8 covariates in [0, 1], 4 unbalanced classes."""
    rng = np.random.default_rng(seed)
    W = rng.normal(0.0, 4.0, size=(4, 8))
    b = np.array([1.0, 0.6, 0.2, -0.4])
    X = np.clip(rng.beta(2.0, 2.0, size=(n, 8)) + 0.05 * rng.standard_normal((n, 8)), 0.0, 1.0)
    P = softmax(X @ W.T + b - (X @ W.T).mean(axis=0))
    u = rng.random(n)
    y = np.minimum((u[:, None] >= np.cumsum(P, axis=1)).sum(axis=1), 3)
    # every class must appear so resampling keeps all actions
    for k in range(4):
        if not np.any(y == k):
            y[int(np.argmax(P[:, k]))] = k
    return X, y


def two_class_source(L: float = 2.0, p: int = 2) -> LogisticLabelSource:
    """Two-class logistic labels whose conditional means are exactly L-Lipschitz.

    The class-1 score runs from -0.6 to +0.4 times its span across the cube, so
    both corners hold rows where one class has probability under 0.05 and
    falls outside behavior support.
    """
    direction = np.ones(p) / math.sqrt(p)
    w = 4.0 * L * direction  # sigmoid slope 1/4 gives L exactly
    span = float(w.sum())
    W = np.vstack([np.zeros(p), w])
    b = np.array([0.0, -0.6 * span])
    return LogisticLabelSource(W, b)
