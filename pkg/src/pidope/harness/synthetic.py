"""Synthetic single-action problems with a known conditional mean.

Covariates are uniform on the unit cube [0, 1]^p. The behavior policy is
zeroed on a halfspace ``x[axis] > threshold`` to create the no-overlap
region. Population quantities are integrated on midpoint grids.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..data import LoggedDataset

MU_FAMILIES = ("linear", "sinusoid", "piecewise")
QUAD_RTOL = 1e-3
QUAD_MAX_POINTS = 4_000_000


class QuadratureError(RuntimeError):
    """Grid refinement did not settle to the requested relative tolerance."""


@dataclass(frozen=True)
class MeanFunction:
    """A conditional mean with an analytically known Lipschitz constant.

    ``linear``: ``intercept + coeffs . x``.
    ``sinusoid``: ``intercept + amp * sin(2 pi freq x[axis])``.
    ``piecewise``: continuous piecewise-linear in ``x[axis]`` through
    ``(knots[k], values[k])``, flat outside the knots.
    """

    kind: str
    coeffs: tuple = ()
    intercept: float = 0.0
    amp: float = 0.0
    freq: float = 1.0
    axis: int = 0
    knots: tuple = ()
    values: tuple = ()

    def __post_init__(self):
        if self.kind not in MU_FAMILIES:
            raise ValueError(f"unknown mean family {self.kind!r}; expected one of {MU_FAMILIES}")
        if self.kind == "piecewise":
            k = np.asarray(self.knots, dtype=float)
            if k.size < 2 or k.size != len(self.values) or np.any(np.diff(k) <= 0):
                raise ValueError("piecewise mean needs >= 2 increasing knots and one value per knot")

    def __call__(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.kind == "linear":
            return self.intercept + X @ np.asarray(self.coeffs, dtype=float)
        x = X[:, self.axis]
        if self.kind == "sinusoid":
            return self.intercept + self.amp * np.sin(2 * math.pi * self.freq * x)
        return np.interp(x, self.knots, self.values)

    @property
    def lipschitz(self) -> float:
        """Euclidean Lipschitz constant over the whole domain."""
        if self.kind == "linear":
            return float(np.linalg.norm(self.coeffs))
        if self.kind == "sinusoid":
            return 2 * math.pi * abs(self.freq * self.amp)
        return float(np.max(np.abs(np.diff(self.values) / np.diff(self.knots))))

    def describe(self) -> dict:
        out = {"kind": self.kind, "lipschitz": self.lipschitz}
        if self.kind == "linear":
            out.update(coeffs=list(self.coeffs), intercept=self.intercept)
        elif self.kind == "sinusoid":
            out.update(amp=self.amp, freq=self.freq, axis=self.axis, intercept=self.intercept)
        else:
            out.update(knots=list(self.knots), values=list(self.values), axis=self.axis)
        return out


@dataclass(frozen=True)
class PolicySpec:
    """Probability of the binarized action: a constant, or logistic in ``x[axis]``."""

    kind: str = "constant"
    value: float = 0.5
    slope: float = 0.0
    axis: int = 0

    def __call__(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        if self.kind == "constant":
            return np.full(X.shape[0], float(self.value))
        if self.kind == "logistic":
            return 1.0 / (1.0 + np.exp(-(self.value + self.slope * X[:, self.axis])))
        raise ValueError(f"unknown policy kind {self.kind!r}")


@dataclass(frozen=True)
class SyntheticSpec:
    p: int
    mu: MeanFunction
    noise_sd: float = 0.1
    outcome: str = "gaussian"  # or "bernoulli"
    eval_policy: PolicySpec = field(default_factory=lambda: PolicySpec("constant", 1.0))
    behavior_policy: PolicySpec = field(default_factory=lambda: PolicySpec("constant", 0.5))
    carve_axis: int = 0
    carve_threshold: float = 0.7
    L_true: Optional[float] = None

    def __post_init__(self):
        if self.p < 1:
            raise ValueError("p must be >= 1")
        if self.mu.kind == "linear" and len(self.mu.coeffs) != self.p:
            raise ValueError(f"linear mean needs {self.p} coefficients")
        if max(self.carve_axis, self.mu.axis) >= self.p:
            raise ValueError("axis out of range")
        if self.outcome not in ("gaussian", "bernoulli"):
            raise ValueError(f"unknown outcome model {self.outcome!r}")
        if self.L_true is None:
            object.__setattr__(self, "L_true", self.mu.lipschitz)
        self.verify_lipschitz()

    def verify_lipschitz(self, grid: int = 2001, pairs: int = 20000, seed: int = 0) -> float:
        """Largest finite-difference slope of the mean; raises if it exceeds L_true."""
        rng = np.random.default_rng(seed)
        slopes = []
        for axis in range(self.p):
            X = np.full((grid, self.p), 0.5)
            X[:, axis] = np.linspace(0, 1, grid)
            m = self.mu(X)
            slopes.append(np.max(np.abs(np.diff(m))) * (grid - 1))
        A = rng.random((pairs, self.p))
        B = rng.random((pairs, self.p))
        d = np.linalg.norm(A - B, axis=1)
        ok = d > 1e-9
        slopes.append(np.max(np.abs(self.mu(A) - self.mu(B))[ok] / d[ok]))
        worst = float(max(slopes))
        if worst > self.L_true + 1e-6:
            raise ValueError(f"declared L={self.L_true} is below an observed slope {worst:.6g}")
        return worst

    def behavior(self, X: np.ndarray) -> np.ndarray:
        pb = self.behavior_policy(X)
        return np.where(np.atleast_2d(X)[:, self.carve_axis] > self.carve_threshold, 0.0, pb)

    def sample(self, n: int, rng: np.random.Generator) -> LoggedDataset:
        X = rng.random((n, self.p))
        pb = self.behavior(X)
        pe = self.eval_policy(X)
        a = (rng.random(n) < pb).astype(np.int8)
        m = self.mu(X)
        if self.outcome == "gaussian":
            y = m + self.noise_sd * rng.standard_normal(n)
        else:
            y = (rng.random(n) < np.clip(m, 0, 1)).astype(float)
        y = np.where(a == 1, y, np.nan)
        return LoggedDataset(X, pb, pe, a, y)

    # -- population quantities ------------------------------------------------

    def _grid(self, m: int) -> np.ndarray:
        if self.p > 2:
            raise ValueError("grid quadrature is implemented for p <= 2")
        g = (np.arange(m) + 0.5) / m
        if self.p == 1:
            return g[:, None]
        a, b = np.meshgrid(g, g, indexing="ij")
        return np.column_stack([a.ravel(), b.ravel()])

    def psi(self, m: int = 2000) -> float:
        """Population policy value E[pi_e(X) mu(X)]."""
        G = self._grid(m if self.p == 1 else int(math.sqrt(m * 200)))
        return float(np.mean(self.eval_policy(G) * self.mu(G)))

    def _psi2_lower_at(self, m: int, L: float, lower: float) -> float:
        G = self._grid(m)
        no = G[:, self.carve_axis] > self.carve_threshold
        ov = G[~no]
        Gn = G[no]
        if Gn.shape[0] == 0:
            return 0.0
        m_ov = self.mu(ov)
        best = np.empty(Gn.shape[0])
        step = max(1, QUAD_MAX_POINTS // max(ov.shape[0], 1))
        for s in range(0, Gn.shape[0], step):
            q = Gn[s:s + step]
            D = np.sqrt(((q[:, None, :] - ov[None, :, :]) ** 2).sum(axis=2))
            best[s:s + step] = np.max(m_ov[None, :] - L * D, axis=1)
        best = np.maximum(best, lower)
        return float(np.sum(self.eval_policy(Gn) * best)) / G.shape[0]

    def psi2_lower(self, L: float, lower: float = -math.inf, m0: Optional[int] = None,
                   rtol: float = QUAD_RTOL, max_refine: int = 6) -> tuple[float, int]:
        """Population lower bound of the no-overlap part, by grid refinement.

        Doubles the per-axis resolution until the relative change is below
        ``rtol``; returns (value, final resolution). Raises QuadratureError if
        it never settles.
        """
        m = m0 or (400 if self.p == 1 else 40)
        prev = self._psi2_lower_at(m, L, lower)
        for _ in range(max_refine):
            m *= 2
            cur = self._psi2_lower_at(m, L, lower)
            if abs(cur - prev) <= rtol * max(abs(cur), 1e-12):
                return cur, m
            prev = cur
        raise QuadratureError(f"population bound did not settle to rtol={rtol} by resolution {m}")

    def describe(self) -> dict:
        return {
            "p": self.p,
            "mu": self.mu.describe(),
            "noise_sd": self.noise_sd,
            "outcome": self.outcome,
            "eval_policy": vars(self.eval_policy),
            "behavior_policy": vars(self.behavior_policy),
            "carve_axis": self.carve_axis,
            "carve_threshold": self.carve_threshold,
            "L_true": self.L_true,
        }
