"""Partial-identification intervals for off-policy evaluation without overlap."""
from .closed_form import (
    EmptyOverlapError,
    InfeasibleError,
    UnidentifiedBounds,
    lipschitz_bounds,
    manski_bounds,
    monotone_bounds,
)
from .data import (
    L_INFINITY,
    AssumptionSet,
    DatasetError,
    FeasibilityReport,
    Lipschitz,
    LoggedDataset,
    Metric,
    MuHat,
    PartialOrder,
    Schema,
    check_feasibility,
    load_dataset,
    save_dataset,
)
from .engine import (
    BoundResult,
    MultiActionResult,
    Options,
    SweepResult,
    evaluate,
    evaluate_multi_action,
    route,
    sweep_L,
)
from .identified import IdentifiedEstimate, estimate_identified
from .nn import NnIndex, StaleIndexError, build_nn_index, conservative_bounds
from .propagation import ConstraintSystem, build_system, solve_max, solve_min

__version__ = "0.1.0"

__all__ = [
    "AssumptionSet",
    "BoundResult",
    "ConstraintSystem",
    "DatasetError",
    "EmptyOverlapError",
    "FeasibilityReport",
    "IdentifiedEstimate",
    "InfeasibleError",
    "L_INFINITY",
    "Lipschitz",
    "LoggedDataset",
    "Metric",
    "MuHat",
    "MultiActionResult",
    "NnIndex",
    "Options",
    "PartialOrder",
    "Schema",
    "StaleIndexError",
    "SweepResult",
    "UnidentifiedBounds",
    "build_nn_index",
    "build_system",
    "check_feasibility",
    "conservative_bounds",
    "estimate_identified",
    "evaluate",
    "evaluate_multi_action",
    "lipschitz_bounds",
    "load_dataset",
    "manski_bounds",
    "monotone_bounds",
    "route",
    "save_dataset",
    "solve_max",
    "solve_min",
    "sweep_L",
]
