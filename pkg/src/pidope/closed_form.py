"""Closed-form bounds on the no-overlap contribution.

Each no-overlap row gets a pointwise bound built only from overlap rows; the
aggregate is (1/n) sum_i pi_e(X_i) * bound_i over no-overlap rows.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .data import (
    FeasibilityProfile,
    FeasibilityReport,
    LoggedDataset,
    Metric,
    MuHat,
    PartialOrder,
    is_infinite_L,
    row_chunks,
)

METHODS = ("manski", "lipschitz", "lipschitz-bounded", "monotone", "monotone-bounded",
           "propagation", "conservative-nn")


class InfeasibleError(ValueError):
    """The fitted values violate an asserted constraint on the overlap region."""

    def __init__(self, message: str, report: Optional[FeasibilityReport] = None):
        if report is not None and report.max_ratio > 0 and report.monotone_violation is None:
            message += f" (mu-hat needs L >= {report.max_ratio:.6g})"
        super().__init__(message)
        self.report = report


class EmptyOverlapError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class UnidentifiedBounds:
    lower: float
    upper: float
    rows: np.ndarray
    per_point_lower: np.ndarray
    per_point_upper: np.ndarray
    method: str
    # row index attaining each per-point bound, -1 where the box or nothing binds
    argmax_lower: Optional[np.ndarray] = None
    argmin_upper: Optional[np.ndarray] = None
    diagnostics: tuple = field(default=())

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def to_dict(self) -> dict:
        return {
            "lower": _num(self.lower),
            "upper": _num(self.upper),
            "method": self.method,
            "n_no_overlap": int(self.rows.size),
            "diagnostics": list(self.diagnostics),
        }


def _num(x):
    if isinstance(x, float) and math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return float(x)


def aggregate(data: LoggedDataset, rows: np.ndarray, values: np.ndarray) -> float:
    """(1/n) sum over ``rows`` of pi_e * values; rows with pi_e = 0 never contribute."""
    w = data.eval_prob[rows]
    active = w > 0
    if not np.any(active):
        return 0.0
    return float(np.sum(w[active] * values[active])) / data.n


def manski_bounds(data: LoggedDataset, lower: float, upper: float) -> UnidentifiedBounds:
    if not lower <= upper:
        raise ValueError(f"bounds need lower <= upper, got [{lower}, {upper}]")
    rows = data.no_overlap_rows
    per_lo = np.full(rows.size, float(lower))
    per_hi = np.full(rows.size, float(upper))
    # same summation as the other closed forms, so a saturated bound matches exactly
    return UnidentifiedBounds(
        lower=aggregate(data, rows, per_lo),
        upper=aggregate(data, rows, per_hi),
        rows=rows,
        per_point_lower=per_lo,
        per_point_upper=per_hi,
        method="manski",
    )


def _require_feasible(report: FeasibilityReport, what: str) -> None:
    if report.feasible:
        return
    if report.monotone_violation is not None:
        i, j = report.monotone_violation
        raise InfeasibleError(f"{what}: mu-hat decreases along ordered overlap pair ({i}, {j})", report)
    raise InfeasibleError(
        f"{what}: mu-hat violates the Lipschitz constraint on overlap pair {report.worst_pair}",
        report,
    )


def lipschitz_bounds(
    data: LoggedDataset,
    mu: MuHat,
    L: float,
    metric: Metric,
    bounds: Optional[tuple] = None,
    check: bool = True,
    cross: Optional[np.ndarray] = None,
) -> UnidentifiedBounds:
    """Sharp bounds under Lipschitz smoothness, optionally intersected with a box.

    Lower bound at no-overlap row i is ``l v max_j mu_j - L d(X_i, X_j)`` over
    overlap rows j; the upper bound mirrors it with ``u ^ min_j mu_j + L d``.
    ``cross`` may carry the precomputed (no-overlap x overlap) distance block.
    """
    rows = data.no_overlap_rows
    ov = data.overlap_rows
    lo, hi = bounds if bounds is not None else (-math.inf, math.inf)
    if ov.size == 0:
        if bounds is None:
            raise EmptyOverlapError("no overlap rows: Lipschitz bounds are undefined without a box")
        res = manski_bounds(data, lo, hi)
        return replace(res, diagnostics=("empty overlap region: fell back to manski bounds",))
    if check:
        report = FeasibilityProfile(data, mu, metric=metric).report(L)
        _require_feasible(report, "lipschitz bounds")
    metric.check_shape(data.covariates)
    m = mu.fitted_values[ov]
    per_lo = np.empty(rows.size)
    per_hi = np.empty(rows.size)
    arg_lo = np.empty(rows.size, dtype=np.intp)
    arg_hi = np.empty(rows.size, dtype=np.intp)
    for sl in row_chunks(rows.size, ov.size):
        D = cross[sl] if cross is not None else metric.cross(data.covariates, rows[sl], ov)
        LD = L * D if not is_infinite_L(L) else np.where(D > 0, math.inf, 0.0)
        cand_lo = m[None, :] - LD
        cand_hi = m[None, :] + LD
        k_lo = np.argmax(cand_lo, axis=1)
        k_hi = np.argmin(cand_hi, axis=1)
        idx = np.arange(k_lo.size)
        per_lo[sl] = cand_lo[idx, k_lo]
        per_hi[sl] = cand_hi[idx, k_hi]
        arg_lo[sl] = ov[k_lo]
        arg_hi[sl] = ov[k_hi]
    if bounds is not None:
        arg_lo = np.where(per_lo >= lo, arg_lo, -1)
        arg_hi = np.where(per_hi <= hi, arg_hi, -1)
        per_lo = np.maximum(per_lo, lo)
        per_hi = np.minimum(per_hi, hi)
    return UnidentifiedBounds(
        lower=aggregate(data, rows, per_lo),
        upper=aggregate(data, rows, per_hi),
        rows=rows,
        per_point_lower=per_lo,
        per_point_upper=per_hi,
        method="lipschitz-bounded" if bounds is not None else "lipschitz",
        argmax_lower=arg_lo,
        argmin_upper=arg_hi,
    )


def monotone_bounds(
    data: LoggedDataset,
    mu: MuHat,
    order: PartialOrder,
    lower: Optional[float] = None,
    upper: Optional[float] = None,
    check: bool = True,
) -> UnidentifiedBounds:
    """Bounds under monotonicity of the conditional mean along ``order``.

    Lower bound at no-overlap row i is the largest mu-hat among overlap rows
    preceding it (or ``lower`` if none does, or if that is larger); the upper
    bound is the smallest mu-hat among overlap rows it precedes.
    """
    rows = data.no_overlap_rows
    ov = data.overlap_rows
    lo = -math.inf if lower is None else float(lower)
    hi = math.inf if upper is None else float(upper)
    if check:
        report = FeasibilityProfile(data, mu, order=order).report()
        _require_feasible(report, "monotone bounds")
    m = mu.fitted_values[ov]
    X = data.covariates
    per_lo = np.full(rows.size, lo)
    per_hi = np.full(rows.size, hi)
    arg_lo = np.full(rows.size, -1, dtype=np.intp)
    arg_hi = np.full(rows.size, -1, dtype=np.intp)
    if ov.size:
        for sl in row_chunks(rows.size, ov.size):
            below = order.relation(X, ov, rows[sl]).T  # overlap j precedes no-overlap i
            above = order.relation(X, rows[sl], ov)  # no-overlap i precedes overlap j
            cand_lo = np.where(below, m[None, :], -math.inf)
            cand_hi = np.where(above, m[None, :], math.inf)
            k_lo = np.argmax(cand_lo, axis=1)
            k_hi = np.argmin(cand_hi, axis=1)
            idx = np.arange(k_lo.size)
            best_lo = cand_lo[idx, k_lo]
            best_hi = cand_hi[idx, k_hi]
            take_lo = best_lo > per_lo[sl]
            take_hi = best_hi < per_hi[sl]
            per_lo[sl] = np.where(take_lo, best_lo, per_lo[sl])
            per_hi[sl] = np.where(take_hi, best_hi, per_hi[sl])
            arg_lo[sl] = np.where(take_lo, ov[k_lo], -1)
            arg_hi[sl] = np.where(take_hi, ov[k_hi], -1)
    bounded = lower is not None and upper is not None
    diagnostics = ()
    if ov.size == 0:
        diagnostics = ("empty overlap region: only the box constrains the bounds",)
    return UnidentifiedBounds(
        lower=aggregate(data, rows, per_lo),
        upper=aggregate(data, rows, per_hi),
        rows=rows,
        per_point_lower=per_lo,
        per_point_upper=per_hi,
        method="monotone-bounded" if bounded else "monotone",
        argmax_lower=arg_lo,
        argmin_upper=arg_hi,
        diagnostics=diagnostics,
    )
