"""Importance-weighted estimate of the overlap-region contribution."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import LoggedDataset

ESTIMATOR_KINDS = ("ipw", "self-normalized")


@dataclass(frozen=True)
class IdentifiedEstimate:
    value: float
    estimator_kind: str
    n_overlap: int
    # weight mass sum_i A_i pi_e/pi_b over active rows (the self-normalizer)
    weight_sum: float
    empty_overlap: bool = False

    def to_dict(self) -> dict:
        return {
            "value": self.value,
            "estimator_kind": self.estimator_kind,
            "n_overlap": self.n_overlap,
            "weight_sum": self.weight_sum,
            "empty_overlap": self.empty_overlap,
        }


def importance_terms(data: LoggedDataset) -> tuple[np.ndarray, np.ndarray]:
    """Per-row weights A_i pi_e/pi_b 1{pi_b > 0} and weighted outcomes."""
    pb = data.behavior_prob
    active = (data.action_taken == 1) & (pb > 0)
    w = np.zeros(data.n)
    w[active] = data.eval_prob[active] / pb[active]
    wy = np.zeros(data.n)
    wy[active] = w[active] * data.outcome[active]
    return w, wy


def estimate_identified(data: LoggedDataset, kind: str = "self-normalized") -> IdentifiedEstimate:
    """Estimate E[Y pi_e(X) 1{pi_b(X) > 0}].

    ``ipw`` divides the weighted outcome sum by n. ``self-normalized`` divides
    by the sum of the importance weights (0 when that sum is 0) and rescales by
    the known evaluation mass on overlap rows, (1/n) sum_i pi_e(X_i) 1{pi_b(X_i) > 0}.
    The rescaling is what keeps it consistent for a single binarized action:
    the weights average to that mass, not to 1.
    """
    if kind not in ESTIMATOR_KINDS:
        raise ValueError(f"unknown estimator kind {kind!r}; expected one of {ESTIMATOR_KINDS}")
    w, wy = importance_terms(data)
    n_overlap = int(np.count_nonzero(data.overlap))
    # np.sum uses pairwise summation, which is deterministic for a fixed array
    total = float(np.sum(wy))
    weight_sum = float(np.sum(w))
    if kind == "ipw":
        value = total / data.n
    else:
        mass = float(np.sum(np.where(data.overlap, data.eval_prob, 0.0))) / data.n
        value = total / weight_sum * mass if weight_sum > 0 else 0.0
    return IdentifiedEstimate(value, kind, n_overlap, weight_sum, empty_overlap=n_overlap == 0)
