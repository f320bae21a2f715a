"""Coverage, threshold-policy and convergence-rate studies.

Every study is a pure function of its inputs and an integer seed. Each
replication gets its own generator spawned from the seed, so results do not
depend on evaluation order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from ..closed_form import InfeasibleError, aggregate, lipschitz_bounds
from ..data import (
    L_INFINITY,
    AssumptionSet,
    FeasibilityProfile,
    Lipschitz,
    LoggedDataset,
    Metric,
    MuHat,
    is_infinite_L,
)
from ..engine import Options, sweep_L
from ..identified import estimate_identified
from .fitters import fit_model, fit_mu
from .multiclass import (
    DEFAULT_THRESHOLD,
    LogisticLabelSource,
    ResampleSource,
    convert_multiclass,
)
from .synthetic import SyntheticSpec

Source = Union[SyntheticSpec, LogisticLabelSource, ResampleSource]


def _spawn(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *key]))


def _sorted_grid(L_grid: Sequence[float]) -> tuple[list, np.ndarray]:
    grid = [L_INFINITY if is_infinite_L(L) else float(L) for L in L_grid]
    order = np.argsort(grid, kind="stable")
    return [grid[k] for k in order], order


def _sweep_sum(datasets, mus, bounds, grid, options) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Summed interval endpoints and joint feasibility over actions, per grid cell."""
    lo = np.zeros(len(grid))
    hi = np.zeros(len(grid))
    ok = np.ones(len(grid), dtype=bool)
    for d, mu in zip(datasets, mus):
        base = AssumptionSet(bounds, Lipschitz(grid[0]))
        sweep = sweep_L(d, mu, base, grid, options)
        for k, cell in enumerate(sweep.cells):
            if cell.result is None:
                ok[k] = False
            else:
                lo[k] += cell.result.lower
                hi[k] += cell.result.upper
    lo[~ok] = np.nan
    hi[~ok] = np.nan
    return lo, hi, ok


# ---------------------------------------------------------------------------
# Coverage
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CoverageReport:
    n_grid: tuple
    L_grid: tuple
    replications: int
    truth: float
    eps: float
    # arrays of shape (len(n_grid), len(L_grid), replications)
    lower: np.ndarray
    upper: np.ndarray
    feasible: np.ndarray
    source: dict = field(default_factory=dict)

    def coverage(self, eps: Optional[float] = None) -> np.ndarray:
        """Fraction of replications that are feasible and cover the truth within eps."""
        eps = self.eps if eps is None else eps
        with np.errstate(invalid="ignore"):
            hit = self.feasible & (self.lower - eps <= self.truth) & (self.truth <= self.upper + eps)
        return hit.mean(axis=2)

    def feasibility_rate(self) -> np.ndarray:
        return self.feasible.mean(axis=2)

    def cell(self, n: int, L: float) -> dict:
        i = self.n_grid.index(n)
        j = self.L_grid.index(L)
        return {"coverage": float(self.coverage()[i, j]),
                "feasibility_rate": float(self.feasibility_rate()[i, j])}

    def rows(self, eps: Optional[float] = None) -> list[dict]:
        cov = self.coverage(eps)
        feas = self.feasibility_rate()
        out = []
        for i, n in enumerate(self.n_grid):
            for j, L in enumerate(self.L_grid):
                with np.errstate(invalid="ignore"):
                    width = np.nanmean(self.upper[i, j] - self.lower[i, j]) if feas[i, j] > 0 else math.nan
                out.append({
                    "n": n,
                    "L": "inf" if is_infinite_L(L) else L,
                    "eps": self.eps if eps is None else eps,
                    "coverage": float(cov[i, j]),
                    "feasibility_rate": float(feas[i, j]),
                    "mean_width": float(width),
                    "replications": self.replications,
                })
        return out

    def to_dict(self) -> dict:
        return {"truth": self.truth, "eps": self.eps, "replications": self.replications,
                "source": self.source, "cells": self.rows()}


def _classification_rep(source, n, rng, grid, bounds, fitter, options, threshold):
    if isinstance(source, ResampleSource):
        idx = source.sample_rows(n, rng)
        X, y, P = source.features[idx], source.labels[idx], source.base_eval_probs[idx]
    else:
        X, y = source.sample(n, rng)
        P = source.eval_probs(X)
    conv = convert_multiclass(X, y, P, threshold=threshold, rng=rng)
    mus = [fit_mu(d, fitter)[0] for d in conv.datasets]
    return _sweep_sum(conv.datasets, mus, bounds, grid, options)


def _synthetic_rep(spec, n, rng, grid, bounds, fitter, options):
    d = spec.sample(n, rng)
    mu, _ = fit_mu(d, fitter)
    return _sweep_sum([d], [mu], bounds, grid, options)


def simulate_coverage(
    source: Source,
    n_grid: Sequence[int],
    L_grid: Sequence[float],
    replications: int,
    eps: float = 0.01,
    *,
    seed: int = 0,
    bounds: Optional[tuple] = (0.0, 1.0),
    fitter: str = "logistic",
    estimator: str = "self-normalized",
    threshold: float = DEFAULT_THRESHOLD,
) -> CoverageReport:
    """Monte Carlo coverage of the interval over an (n, L) grid.

    A replication covers when mu-hat is feasible at L and
    ``lower - eps <= truth <= upper + eps``; infeasible replications never cover.
    Fitted values are clamped into ``bounds`` when given.
    """
    grid, order = _sorted_grid(L_grid)
    inverse = np.argsort(order)
    options = Options(estimator=estimator, clamp_mu=bounds is not None)
    shape = (len(n_grid), len(grid), replications)
    lower = np.full(shape, np.nan)
    upper = np.full(shape, np.nan)
    feasible = np.zeros(shape, dtype=bool)
    for i, n in enumerate(n_grid):
        for r in range(replications):
            rng = _spawn(seed, i, r)
            if isinstance(source, SyntheticSpec):
                lo, hi, ok = _synthetic_rep(source, n, rng, grid, bounds, fitter, options)
            else:
                lo, hi, ok = _classification_rep(source, n, rng, grid, bounds, fitter, options, threshold)
            lower[i, :, r] = lo[inverse]
            upper[i, :, r] = hi[inverse]
            feasible[i, :, r] = ok[inverse]
    truth = source.psi() if isinstance(source, SyntheticSpec) else source.truth()
    return CoverageReport(tuple(int(n) for n in n_grid), tuple(float(L) for L in L_grid), replications,
                          float(truth), eps, lower, upper, feasible, source.describe())


def pilot_max_ratio(source: Source, n: int, *, seed: int = 0, fitter: str = "logistic",
                    bounds: Optional[tuple] = (0.0, 1.0), threshold: float = DEFAULT_THRESHOLD) -> float:
    """Smallest L at which mu-hat from one pilot sample is feasible (max over actions)."""
    rng = _spawn(seed, 10**6)
    if isinstance(source, SyntheticSpec):
        datasets = [source.sample(n, rng)]
    elif isinstance(source, ResampleSource):
        idx = source.sample_rows(n, rng)
        datasets = convert_multiclass(source.features[idx], source.labels[idx], source.base_eval_probs[idx],
                                      threshold=threshold, rng=rng).datasets
    else:
        X, y = source.sample(n, rng)
        datasets = convert_multiclass(X, y, source.eval_probs(X), threshold=threshold, rng=rng).datasets
    ratio = 0.0
    for d in datasets:
        mu, _ = fit_mu(d, fitter)
        if bounds is not None:
            v = mu.fitted_values.copy()
            v[d.overlap] = np.clip(v[d.overlap], *bounds)
            mu = MuHat(v)
        ratio = max(ratio, FeasibilityProfile(d, mu, metric=Metric.euclidean()).max_ratio)
    return ratio


# ---------------------------------------------------------------------------
# Threshold-policy study
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ArticleClickModel:
    """Users with covariates in [0, 1]^5 and articles with their own covariates.

    Click probability of article a for user x is
    ``sigmoid(base + user_effect * x[3] + article_effect * V[a, 0] + interaction * x[0] * V[a, 1])``.
    The favoured set holds articles whose V[a, 0] is above the median.
    """

    n_articles: int = 10
    user_dim: int = 5
    article_dim: int = 5
    base: float = -4.5
    user_effect: float = 1.5
    article_effect: float = 1.5
    interaction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.user_dim < 4 or self.article_dim < 2 or self.n_articles < 2:
            raise ValueError("need user_dim >= 4, article_dim >= 2 and at least 2 articles")

    @property
    def article_covariates(self) -> np.ndarray:
        return np.random.default_rng(self.seed).random((self.n_articles, self.article_dim))

    @property
    def favoured(self) -> np.ndarray:
        v0 = self.article_covariates[:, 0]
        return v0 > np.median(v0)

    def click_prob(self, X: np.ndarray) -> np.ndarray:
        V = self.article_covariates
        X = np.atleast_2d(X)
        z = (self.base + self.user_effect * X[:, [3]] + self.article_effect * V[None, :, 0]
             + self.interaction * X[:, [0]] * V[None, :, 1])
        return 1.0 / (1.0 + np.exp(-z))

    def lipschitz(self) -> np.ndarray:
        """Per-article Lipschitz constant of the click probability in x."""
        V = self.article_covariates
        return np.sqrt(self.user_effect ** 2 + (self.interaction * V[:, 1]) ** 2) / 4.0

    def policy(self, X: np.ndarray, T: float) -> np.ndarray:
        """Uniform over all articles when x[3] > T, else uniform over the favoured set."""
        X = np.atleast_2d(X)
        fav = self.favoured
        P = np.empty((X.shape[0], self.n_articles))
        high = X[:, 3] > T
        P[high] = 1.0 / self.n_articles
        P[~high] = fav / fav.sum()
        return P

    def sample(self, n: int, rng: np.random.Generator, behavior_T: float = 0.5):
        X = rng.random((n, self.user_dim))
        B = self.policy(X, behavior_T)
        u = rng.random(n)
        A = np.minimum((u[:, None] >= np.cumsum(B, axis=1)).sum(axis=1), self.n_articles - 1)
        bad = B[np.arange(n), A] == 0
        A[bad] = np.argmax(B[bad], axis=1)
        Y = (rng.random(n) < self.click_prob(X)[np.arange(n), A]).astype(float)
        return X, A, Y

    def value(self, T: float, m: int = 800) -> float:
        """Policy value by midpoint quadrature over the two coordinates that matter."""
        g = (np.arange(m) + 0.5) / m
        a, b = np.meshgrid(g, g, indexing="ij")
        G = np.full((m * m, self.user_dim), 0.5)
        G[:, 0] = a.ravel()
        G[:, 3] = b.ravel()
        return float(np.mean(np.sum(self.policy(G, T) * self.click_prob(G), axis=1)))

    def describe(self) -> dict:
        return {"n_articles": self.n_articles, "user_dim": self.user_dim, "article_dim": self.article_dim,
                "base": self.base, "user_effect": self.user_effect, "article_effect": self.article_effect,
                "interaction": self.interaction, "seed": self.seed}


@dataclass(frozen=True, eq=False)
class PolicyStudyResult:
    table: tuple  # one dict per (T, L)
    model: dict
    n: int

    def rows(self) -> list[dict]:
        return [dict(r) for r in self.table]

    def to_dict(self) -> dict:
        return {"model": self.model, "n": self.n, "rows": self.rows()}


def threshold_policy_study(
    model: ArticleClickModel,
    T_grid: Sequence[float],
    L_grid: Sequence[float],
    n: int = 4000,
    *,
    seed: int = 0,
    behavior_T: float = 0.5,
    fitter: str = "logistic",
    estimator: str = "self-normalized",
) -> PolicyStudyResult:
    """Intervals for the value of each threshold policy, logged under ``behavior_T``.

    Rows carry the interval, the Manski interval, the pure-imputation estimate
    (fitted values read on no-overlap rows), the true value and the
    narrowing relative to Manski.
    """
    rng = _spawn(seed, 0)
    X, A, Y = model.sample(n, rng, behavior_T)
    B = model.policy(X, behavior_T)
    K = model.n_articles
    mus, fit_L = [], []
    for a in range(K):
        fitted = fit_model(fitter, X[A == a], Y[A == a])
        mus.append(MuHat(fitted.predict(X)))
        fit_L.append(fitted.lipschitz)
    mu_L = max(fit_L) if all(v is not None for v in fit_L) else None
    bounds = (0.0, 1.0)
    options = Options(estimator=estimator, clamp_mu=True)
    grid, order = _sorted_grid(L_grid)
    full = grid + [L_INFINITY]
    table = []
    for T in T_grid:
        P = model.policy(X, T)
        datasets = [LoggedDataset(X, B[:, a], P[:, a], (A == a).astype(np.int8), np.where(A == a, Y, np.nan))
                    for a in range(K)]
        lo, hi, ok = _sweep_sum(datasets, mus, bounds, full, options)
        imputation = 0.0
        for d, mu in zip(datasets, mus):
            imputation += estimate_identified(d, estimator).value
            rows = d.no_overlap_rows
            imputation += aggregate(d, rows, np.clip(mu.fitted_values[rows], *bounds))
        no_overlap = np.any((B == 0) & (P > 0), axis=1)
        oracle = model.value(T)
        m_lo, m_hi = lo[-1], hi[-1]
        for k in np.argsort(order):
            L = grid[k]
            width = hi[k] - lo[k]
            m_width = m_hi - m_lo
            table.append({
                "T": float(T),
                "L": "inf" if is_infinite_L(L) else L,
                "feasible": bool(ok[k]),
                "lower": float(lo[k]),
                "upper": float(hi[k]),
                "width": float(width),
                "manski_lower": float(m_lo),
                "manski_upper": float(m_hi),
                "manski_width": float(m_width),
                "narrowing_pct": float(100.0 * (1.0 - width / m_width)) if m_width > 0 else math.nan,
                "imputation": float(imputation),
                "imputation_inside": bool(ok[k] and lo[k] - 1e-12 <= imputation <= hi[k] + 1e-12),
                "mu_lipschitz": math.nan if mu_L is None else float(mu_L),
                "mu_satisfies": bool(mu_L is not None and (is_infinite_L(L) or mu_L <= L)),
                "oracle": oracle,
                "frac_no_overlap": float(np.mean(no_overlap)),
            })
    return PolicyStudyResult(tuple(table), model.describe(), n)


# ---------------------------------------------------------------------------
# Convergence rate of the estimated lower bound
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class RateStudyResult:
    n_grid: tuple
    target: float
    quadrature_resolution: int
    mse: np.ndarray
    mse_oracle: np.ndarray
    infeasible: np.ndarray
    replications: int
    L: float

    @property
    def slope(self) -> float:
        """Least-squares slope of log MSE against log n."""
        return float(np.polyfit(np.log(self.n_grid), np.log(self.mse), 1)[0])

    @property
    def slope_oracle(self) -> float:
        return float(np.polyfit(np.log(self.n_grid), np.log(self.mse_oracle), 1)[0])

    def rows(self) -> list[dict]:
        return [{"n": n, "mse": float(self.mse[i]), "mse_oracle": float(self.mse_oracle[i]),
                 "infeasible": int(self.infeasible[i]), "replications": self.replications,
                 "target": self.target, "L": self.L}
                for i, n in enumerate(self.n_grid)]

    def to_dict(self) -> dict:
        return {"target": self.target, "quadrature_resolution": self.quadrature_resolution,
                "slope": self.slope, "slope_oracle": self.slope_oracle, "rows": self.rows()}


def rate_study(
    spec: SyntheticSpec,
    n_grid: Sequence[int],
    replications: int,
    *,
    L: Optional[float] = None,
    seed: int = 0,
    fitter: str = "ridge",
    bounds: Optional[tuple] = None,
) -> RateStudyResult:
    """Empirical MSE of the estimated no-overlap lower bound against its population value.

    ``L`` defaults to the generator's true constant. Replications where the fitted
    values are infeasible at L are counted and left out of the MSE. The oracle
    column plugs in the true conditional mean on the same samples.
    """
    L = spec.L_true if L is None else float(L)
    lower = bounds[0] if bounds is not None else -math.inf
    target, resolution = spec.psi2_lower(L, lower)
    metric = Metric.euclidean()
    mse = np.empty(len(n_grid))
    mse_or = np.empty(len(n_grid))
    infeasible = np.zeros(len(n_grid), dtype=int)
    for i, n in enumerate(n_grid):
        err, err_or = [], []
        for r in range(replications):
            d = spec.sample(int(n), _spawn(seed, i, r))
            mu, _ = fit_mu(d, fitter)
            try:
                est = lipschitz_bounds(d, mu, L, metric, bounds).lower
                err.append(est - target)
            except InfeasibleError:
                infeasible[i] += 1
            oracle = MuHat(spec.mu(d.covariates))
            err_or.append(lipschitz_bounds(d, oracle, L, metric, bounds, check=False).lower - target)
        mse[i] = np.mean(np.square(err)) if err else math.nan
        mse_or[i] = np.mean(np.square(err_or))
    return RateStudyResult(tuple(int(n) for n in n_grid), target, resolution, mse, mse_or,
                           infeasible, replications, L)
