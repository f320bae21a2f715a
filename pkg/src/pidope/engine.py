"""Interval assembly, solver routing, multi-action reduction and L sweeps."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .closed_form import (
    InfeasibleError,
    UnidentifiedBounds,
    _require_feasible,
    aggregate,
    lipschitz_bounds,
    manski_bounds,
    monotone_bounds,
)
from .data import (
    AssumptionSet,
    FeasibilityProfile,
    FeasibilityReport,
    LoggedDataset,
    MuHat,
    _json_float,
    is_infinite_L,
    prepare_mu,
)
from .identified import IdentifiedEstimate, estimate_identified
from .nn import NnIndex, build_nn_index, conservative_bounds
from .propagation import build_system, solve_max, solve_min

# Cache the (no-overlap x overlap) distance block in sweeps up to this many entries.
_CROSS_CACHE_ELEMS = 20_000_000
NESTING_TOL = 1e-12


@dataclass(frozen=True)
class Options:
    estimator: str = "self-normalized"
    conservative: bool = False
    clamp_mu: bool = False
    # when False, an infeasible mu-hat still yields the formula's interval, flagged in the report
    enforce_feasibility: bool = True


@dataclass(frozen=True, eq=False)
class BoundResult:
    psi_id: IdentifiedEstimate
    psi2: UnidentifiedBounds
    assumptions: AssumptionSet
    method_used: str
    feasibility: FeasibilityReport
    fraction_no_overlap: float
    # empirical variance of per-point lower terms; a diagnostic, not part of the bound
    lower_term_variance: float = math.nan

    @property
    def interval(self) -> tuple[float, float]:
        return (self.psi_id.value + self.psi2.lower, self.psi_id.value + self.psi2.upper)

    @property
    def lower(self) -> float:
        return self.interval[0]

    @property
    def upper(self) -> float:
        return self.interval[1]

    @property
    def width(self) -> float:
        return self.psi2.upper - self.psi2.lower

    def to_dict(self) -> dict:
        lo, hi = self.interval
        return {
            "interval": [_json_float(lo), _json_float(hi)],
            "psi_id": self.psi_id.to_dict(),
            "psi2": self.psi2.to_dict(),
            "method_used": self.method_used,
            "assumptions": self.assumptions.describe(),
            "feasibility": self.feasibility.to_dict(),
            "fraction_no_overlap": self.fraction_no_overlap,
            "lower_term_variance": None if math.isnan(self.lower_term_variance) else self.lower_term_variance,
        }


def route(assumptions: AssumptionSet, conservative: bool = False) -> str:
    """Name of the estimator an assumption set is sent to."""
    lip = assumptions.lipschitz
    finite_lip = lip is not None and not is_infinite_L(lip.L)
    if finite_lip and assumptions.monotone is not None:
        return "propagation"
    if finite_lip:
        return "conservative-nn" if conservative else "lipschitz"
    if assumptions.monotone is not None:
        return "monotone"
    return "manski"


def _per_point_variance(data: LoggedDataset, psi2: UnidentifiedBounds) -> float:
    # variance over all n rows of pi_e * bound_i * 1{no overlap}; 0 on overlap rows
    if psi2.rows.size == 0 or not np.all(np.isfinite(psi2.per_point_lower)):
        return math.nan
    terms = np.zeros(data.n)
    terms[psi2.rows] = data.eval_prob[psi2.rows] * psi2.per_point_lower
    return float(np.var(terms))


def _unidentified(data, mu, assumptions, method, index=None, cross=None) -> UnidentifiedBounds:
    lo, hi = assumptions.lower, assumptions.upper
    if method == "manski":
        return manski_bounds(data, lo, hi)
    if method == "monotone":
        return monotone_bounds(data, mu, assumptions.monotone, *(assumptions.bounds or (None, None)),
                               check=False)
    lip = assumptions.lipschitz
    if method == "lipschitz":
        return lipschitz_bounds(data, mu, lip.L, lip.metric, assumptions.bounds, check=False, cross=cross)
    if method == "conservative-nn":
        if index is None:
            index = build_nn_index(data, lip.metric)
        return conservative_bounds(index, data, mu, lip.L, assumptions.bounds)
    if method == "propagation":
        sys = build_system(data, mu, assumptions)
        lo_sol, hi_sol = solve_min(sys), solve_max(sys)
        for sol in (lo_sol, hi_sol):
            if not sol.optimal:
                raise InfeasibleError(f"constraint system is infeasible: {sol.witness.describe()}")
        rows = data.no_overlap_rows
        t_lo, t_hi = lo_sol.t[rows], hi_sol.t[rows]
        return UnidentifiedBounds(
            lower=aggregate(data, rows, t_lo),
            upper=aggregate(data, rows, t_hi),
            rows=rows,
            per_point_lower=t_lo,
            per_point_upper=t_hi,
            method="propagation",
            diagnostics=(f"relaxation rounds: {lo_sol.rounds}/{hi_sol.rounds}",),
        )
    raise ValueError(f"unknown method {method!r}")


def evaluate(
    data: LoggedDataset,
    mu: Optional[MuHat],
    assumptions: AssumptionSet,
    options: Options = Options(),
    *,
    profile: Optional[FeasibilityProfile] = None,
    index: Optional[NnIndex] = None,
    cross: Optional[np.ndarray] = None,
) -> BoundResult:
    """Partial-identification interval for one binarized action.

    Raises :class:`InfeasibleError` when mu-hat contradicts the assumptions.
    ``profile``, ``index`` and ``cross`` let callers reuse L-independent work.
    """
    method = route(assumptions, options.conservative)
    if mu is None:
        if method != "manski":
            raise ValueError("fitted values are required for any assumption beyond boundedness")
        mu = MuHat(np.full(data.n, np.nan))
        report = FeasibilityReport(feasible=True, max_ratio=0.0)
    else:
        mu = prepare_mu(data, mu, assumptions.bounds, options.clamp_mu)
        if profile is None:
            lip = assumptions.lipschitz
            profile = FeasibilityProfile(
                data, mu,
                metric=lip.metric if lip is not None and method != "monotone" else None,
                order=assumptions.monotone,
            )
        L = assumptions.lipschitz.L if assumptions.lipschitz is not None else None
        report = profile.report(L)
    if method != "manski" and options.enforce_feasibility:
        _require_feasible(report, "evaluate")
    psi2 = _unidentified(data, mu, assumptions, method, index=index, cross=cross)
    psi_id = estimate_identified(data, options.estimator)
    return BoundResult(
        psi_id=psi_id,
        psi2=psi2,
        assumptions=assumptions,
        method_used=psi2.method,
        feasibility=report,
        fraction_no_overlap=float(np.count_nonzero(~data.overlap)) / data.n,
        lower_term_variance=_per_point_variance(data, psi2),
    )


# ---------------------------------------------------------------------------
# Multi-action reduction
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MultiActionResult:
    per_action: tuple

    @property
    def interval(self) -> tuple[float, float]:
        lo = float(np.sum([r.interval[0] for r in self.per_action]))
        hi = float(np.sum([r.interval[1] for r in self.per_action]))
        return lo, hi

    @property
    def lower(self) -> float:
        return self.interval[0]

    @property
    def upper(self) -> float:
        return self.interval[1]

    @property
    def psi_id(self) -> float:
        return float(np.sum([r.psi_id.value for r in self.per_action]))

    @property
    def feasible(self) -> bool:
        return all(r.feasibility.feasible for r in self.per_action)

    def to_dict(self) -> dict:
        lo, hi = self.interval
        return {
            "interval": [_json_float(lo), _json_float(hi)],
            "per_action": [r.to_dict() for r in self.per_action],
        }


def evaluate_multi_action(
    datasets: Sequence[LoggedDataset],
    mus: Sequence[Optional[MuHat]],
    assumptions,
    options: Options = Options(),
) -> MultiActionResult:
    """Sum per-action intervals; ``assumptions`` may be one set or one per action."""
    if not datasets:
        raise ValueError("need at least one per-action dataset")
    n = datasets[0].n
    for a, d in enumerate(datasets):
        if d.n != n:
            raise ValueError(f"action {a} has {d.n} rows, expected {n}")
        if not np.array_equal(d.covariates, datasets[0].covariates):
            raise ValueError(f"action {a} does not share covariates with action 0")
    if len(mus) != len(datasets):
        raise ValueError("need one fitted-value vector per action")
    if isinstance(assumptions, AssumptionSet):
        assumptions = [assumptions] * len(datasets)
    if len(assumptions) != len(datasets):
        raise ValueError("need one assumption set per action")
    return MultiActionResult(tuple(
        evaluate(d, m, s, options) for d, m, s in zip(datasets, mus, assumptions)
    ))


# ---------------------------------------------------------------------------
# Sensitivity sweep over L
# ---------------------------------------------------------------------------


def _grid_value(L: float):
    return "inf" if is_infinite_L(L) else _json_float(L)


@dataclass(frozen=True, eq=False)
class SweepCell:
    L: float
    result: Optional[BoundResult]
    feasibility: FeasibilityReport

    @property
    def feasible(self) -> bool:
        return self.feasibility.feasible


@dataclass(frozen=True, eq=False)
class SweepResult:
    grid: tuple
    cells: tuple
    nested: bool
    conservative: bool = False
    index_reused: bool = False

    @property
    def results(self) -> list:
        return [c.result for c in self.cells]

    def to_dict(self) -> dict:
        return {
            "grid": [_grid_value(L) for L in self.grid],
            "nested": self.nested,
            "conservative": self.conservative,
            "cells": [
                {
                    "L": _grid_value(c.L),
                    "feasible": c.feasible,
                    "result": c.result.to_dict() if c.result is not None else None,
                    "feasibility": c.feasibility.to_dict(),
                }
                for c in self.cells
            ],
        }

    def rows(self) -> list[dict]:
        """Flat table: one row per grid cell."""
        out = []
        for c in self.cells:
            row = {"L": _grid_value(c.L), "feasible": c.feasible,
                   "max_ratio": _json_float(c.feasibility.max_ratio)}
            if c.result is not None:
                lo, hi = c.result.interval
                row.update(lower=lo, upper=hi, psi_id=c.result.psi_id.value,
                           psi2_lower=c.result.psi2.lower, psi2_upper=c.result.psi2.upper,
                           width=c.result.width, method=c.result.method_used)
            out.append(row)
        return out


def sweep_L(
    data: LoggedDataset,
    mu: MuHat,
    base_assumptions: AssumptionSet,
    L_grid: Sequence[float],
    options: Options = Options(),
    index: Optional[NnIndex] = None,
) -> SweepResult:
    """Evaluate the interval at every L in a sorted grid.

    Infeasible cells (L below what mu-hat needs) are kept with ``result=None``.
    The feasibility profile, the distance block and the neighbour index are
    computed once and shared by every cell.
    """
    grid = tuple(float(L) for L in L_grid)
    if not grid:
        raise ValueError("L grid is empty")
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise ValueError("L grid must be sorted ascending")
    base = base_assumptions.with_L(grid[0])
    metric = base.lipschitz.metric
    mu = prepare_mu(data, mu, base.bounds, options.clamp_mu)
    profile = FeasibilityProfile(data, mu, metric=metric, order=base.monotone)
    mixed = base.monotone is not None
    cross = None
    if not mixed and not options.conservative:
        rows, ov = data.no_overlap_rows, data.overlap_rows
        if 0 < rows.size * ov.size <= _CROSS_CACHE_ELEMS:
            cross = metric.cross(data.covariates, rows, ov)
    reused = False
    if options.conservative and not mixed and data.overlap_rows.size:
        if index is None:
            index = build_nn_index(data, metric)
        reused = True
    cells = []
    for L in grid:
        assumptions = base_assumptions.with_L(L)
        report = profile.report(L)
        result = None
        if report.feasible or not options.enforce_feasibility:
            result = evaluate(data, mu, assumptions, options, profile=profile, index=index, cross=cross)
        cells.append(SweepCell(L, result, report))
    nested = True
    feasible = [c.result for c in cells if c.feasible]
    for a, b in zip(feasible, feasible[1:]):
        if a.lower < b.lower - NESTING_TOL or a.upper > b.upper + NESTING_TOL:
            nested = False
    return SweepResult(grid, tuple(cells), nested, options.conservative, reused)
