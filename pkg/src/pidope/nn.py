"""Conservative bounds from the nearest overlap neighbour.

Replacing the max over all overlap rows by the single nearest overlap row
gives a lower bound that can only be looser (and an upper bound that can only
be higher). The neighbour search does not depend on L, so one index serves a
whole sweep over L at O(n) per value.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .closed_form import EmptyOverlapError, UnidentifiedBounds, aggregate
from .data import LoggedDataset, Metric, MuHat, is_infinite_L, row_chunks

TREE_MAX_DIM = 16
_LEAF_SIZE = 16


class StaleIndexError(ValueError):
    pass


def _sqdist(points: np.ndarray, q: np.ndarray) -> np.ndarray:
    diff = points - q
    return np.einsum("ij,ij->i", diff, diff)


class KDTree:
    """Exact nearest-neighbour search over points in R^p.

    Ties at equal distance resolve to the smallest position in ``points``.
    """

    def __init__(self, points: np.ndarray, leaf_size: int = _LEAF_SIZE):
        self.points = np.ascontiguousarray(points, dtype=float)
        n, self.p = self.points.shape
        self.leaf_size = leaf_size
        # node arrays: split axis (-1 for leaves), split value, children, leaf slice
        self._axis: list[int] = []
        self._value: list[float] = []
        self._left: list[int] = []
        self._right: list[int] = []
        self._lo: list[int] = []
        self._hi: list[int] = []
        self.order = np.arange(n)
        if n:
            self._build(0, n, 0)

    def _new_node(self) -> int:
        for arr, v in ((self._axis, -1), (self._value, 0.0), (self._left, -1), (self._right, -1),
                       (self._lo, 0), (self._hi, 0)):
            arr.append(v)
        return len(self._axis) - 1

    def _build(self, lo: int, hi: int, depth: int) -> int:
        node = self._new_node()
        idx = self.order[lo:hi]
        if hi - lo <= self.leaf_size:
            self._lo[node], self._hi[node] = lo, hi
            return node
        pts = self.points[idx]
        spread = pts.max(axis=0) - pts.min(axis=0)
        axis = int(np.argmax(spread))
        if spread[axis] == 0:
            self._lo[node], self._hi[node] = lo, hi
            return node
        mid = (hi - lo) // 2
        part = np.argpartition(pts[:, axis], mid)
        self.order[lo:hi] = idx[part]
        value = float(self.points[self.order[lo + mid], axis])
        self._axis[node] = axis
        self._value[node] = value
        left = self._build(lo, lo + mid, depth + 1)
        right = self._build(lo + mid, hi, depth + 1)
        self._left[node], self._right[node] = left, right
        return node

    def query(self, q: np.ndarray) -> tuple[int, float]:
        """Return (position, squared distance) of the nearest point to ``q``."""
        q = np.asarray(q, dtype=float)
        best = [math.inf, -1]
        self._search(0, q, best)
        return best[1], best[0]

    def _search(self, node: int, q: np.ndarray, best: list) -> None:
        axis = self._axis[node]
        if axis < 0:
            idx = self.order[self._lo[node]:self._hi[node]]
            d2 = _sqdist(self.points[idx], q)
            for k in np.flatnonzero(d2 <= best[0]):
                j = int(idx[k])
                if d2[k] < best[0] or (d2[k] == best[0] and j < best[1]):
                    best[0], best[1] = float(d2[k]), j
            return
        delta = q[axis] - self._value[node]
        near, far = (self._left[node], self._right[node]) if delta < 0 else (self._right[node], self._left[node])
        self._search(near, q, best)
        # <= so equal-distance points on the far side still get a chance to win the tie
        if delta * delta <= best[0]:
            self._search(far, q, best)


@dataclass(frozen=True, eq=False)
class NnIndex:
    rows: np.ndarray  # no-overlap rows
    neighbor: np.ndarray  # nearest overlap row for each entry of rows
    distance: np.ndarray
    fingerprint: str
    metric: Metric
    method: str

    def neighbor_mu(self, mu: MuHat) -> np.ndarray:
        return mu.fitted_values[self.neighbor]


def build_nn_index(data: LoggedDataset, metric: Metric, method: str = "auto") -> NnIndex:
    """Exact nearest overlap row for every no-overlap row.

    ``method`` is ``brute``, ``tree`` (Euclidean only) or ``auto``, which uses the
    tree for Euclidean metrics with at most 16 covariates.
    """
    ov = data.overlap_rows
    rows = data.no_overlap_rows
    if ov.size == 0:
        raise EmptyOverlapError("nearest-neighbour index needs at least one overlap row")
    metric.check_shape(data.covariates)
    if method == "auto":
        method = "tree" if metric.kind == "euclidean" and data.p <= TREE_MAX_DIM else "brute"
    if method == "tree" and metric.kind != "euclidean":
        raise ValueError("the tree search supports the plain Euclidean metric only")
    X = data.covariates
    nbr = np.empty(rows.size, dtype=np.intp)
    if method == "tree":
        tree = KDTree(X[ov])
        for k, i in enumerate(rows):
            pos, _ = tree.query(X[i])
            nbr[k] = ov[pos]
    elif method == "brute" and metric.kind == "euclidean":
        # same squared-distance arithmetic as the tree, so both break ties identically
        P = np.ascontiguousarray(X[ov])
        for k, i in enumerate(rows):
            nbr[k] = ov[int(np.argmin(_sqdist(P, X[i])))]
    elif method == "brute":
        for sl in row_chunks(rows.size, ov.size):
            D = metric.cross(X, rows[sl], ov)
            nbr[sl] = ov[np.argmin(D, axis=1)]
    else:
        raise ValueError(f"unknown search method {method!r}")
    dist = np.array([metric.cross(X, [i], [j])[0, 0] for i, j in zip(rows, nbr)]) if rows.size else np.zeros(0)
    return NnIndex(rows, nbr, dist, data.fingerprint(), metric, method)


def conservative_bounds(index: NnIndex, data: LoggedDataset, mu: MuHat, L: float,
                        bounds: Optional[tuple] = None) -> UnidentifiedBounds:
    """Bounds using only the nearest overlap neighbour of each no-overlap row."""
    if index.fingerprint != data.fingerprint():
        raise StaleIndexError("index was built for a different dataset (covariates or overlap changed)")
    m = index.neighbor_mu(mu)
    if not is_infinite_L(L):
        LD = L * index.distance
    else:
        LD = np.where(index.distance > 0, math.inf, 0.0)
    per_lo = m - LD
    per_hi = m + LD
    arg_lo = index.neighbor.copy()
    arg_hi = index.neighbor.copy()
    if bounds is not None:
        lo, hi = bounds
        arg_lo = np.where(per_lo >= lo, arg_lo, -1)
        arg_hi = np.where(per_hi <= hi, arg_hi, -1)
        per_lo = np.maximum(per_lo, lo)
        per_hi = np.minimum(per_hi, hi)
    return UnidentifiedBounds(
        lower=aggregate(data, index.rows, per_lo),
        upper=aggregate(data, index.rows, per_hi),
        rows=index.rows,
        per_point_lower=per_lo,
        per_point_upper=per_hi,
        method="conservative-nn",
        argmax_lower=arg_lo,
        argmin_upper=arg_hi,
    )
