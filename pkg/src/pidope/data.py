"""Core domain types: datasets, metrics, orders, assumption sets, feasibility."""
from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist

FEASIBILITY_TOL = 1e-9
TRIANGLE_TOL = 1e-12
# Any Lipschitz constant at or above this is treated as "no smoothness".
L_INFINITY = 1e17

# Max number of distance entries materialized at once by chunked loops.
_CHUNK_ELEMS = 2_000_000


class DatasetError(ValueError):
    """Malformed input or a violated dataset invariant."""

    def __init__(self, message: str, row: Optional[int] = None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


def is_infinite_L(L: float) -> bool:
    return math.isinf(L) or L >= L_INFINITY


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


def row_chunks(n_rows: int, n_cols: int):
    """Yield slices over ``n_rows`` so each block has at most ~_CHUNK_ELEMS entries."""
    step = max(1, _CHUNK_ELEMS // max(n_cols, 1))
    for start in range(0, n_rows, step):
        yield slice(start, min(start + step, n_rows))


# ---------------------------------------------------------------------------
# Metric
# ---------------------------------------------------------------------------

METRIC_KINDS = ("euclidean", "weighted-euclidean", "hamming", "precomputed")


@dataclass(frozen=True, eq=False)
class Metric:
    """Distance on covariate rows.

    ``precomputed`` metrics index a square matrix by row number, so ``cross``
    always takes row indices rather than raw covariate vectors.
    """

    kind: str = "euclidean"
    weights: Optional[np.ndarray] = None
    matrix: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind not in METRIC_KINDS:
            raise ValueError(f"unknown metric kind {self.kind!r}")
        if self.kind == "weighted-euclidean":
            if self.weights is None:
                raise ValueError("weighted-euclidean metric needs weights")
            w = np.asarray(self.weights, dtype=float)
            if w.ndim != 1 or np.any(~np.isfinite(w)) or np.any(w < 0):
                raise ValueError("metric weights must be a finite nonnegative vector")
            object.__setattr__(self, "weights", _frozen(w))
        if self.kind == "precomputed":
            if self.matrix is None:
                raise ValueError("precomputed metric needs a matrix")
            m = np.asarray(self.matrix, dtype=float)
            if m.ndim != 2 or m.shape[0] != m.shape[1]:
                raise ValueError(f"precomputed distance matrix must be square, got {m.shape}")
            if not np.all(np.isfinite(m)) or np.any(m < 0):
                raise ValueError("precomputed distances must be finite and nonnegative")
            if np.any(np.diag(m) != 0):
                raise ValueError("precomputed distances must be zero on the diagonal")
            if not np.array_equal(m, m.T):
                raise ValueError("precomputed distance matrix is not symmetric")
            object.__setattr__(self, "matrix", _frozen(m))

    @classmethod
    def euclidean(cls) -> "Metric":
        return cls("euclidean")

    @classmethod
    def weighted(cls, weights) -> "Metric":
        return cls("weighted-euclidean", weights=np.asarray(weights, dtype=float))

    @classmethod
    def hamming(cls) -> "Metric":
        return cls("hamming")

    @classmethod
    def precomputed(cls, matrix) -> "Metric":
        return cls("precomputed", matrix=np.asarray(matrix, dtype=float))

    def check_shape(self, X: np.ndarray) -> None:
        n, p = X.shape
        if self.kind == "precomputed" and self.matrix.shape[0] != n:
            raise ValueError(
                f"precomputed distance matrix is {self.matrix.shape[0]}x{self.matrix.shape[0]} "
                f"but the dataset has {n} rows"
            )
        if self.kind == "weighted-euclidean" and self.weights.shape[0] != p:
            raise ValueError(f"metric has {self.weights.shape[0]} weights for {p} covariates")

    def cross(self, X: np.ndarray, rows, cols) -> np.ndarray:
        """Distances between rows ``rows`` and ``cols`` of ``X``, shape (len(rows), len(cols))."""
        rows = np.asarray(rows, dtype=np.intp)
        cols = np.asarray(cols, dtype=np.intp)
        if self.kind == "precomputed":
            return np.asarray(self.matrix[np.ix_(rows, cols)], dtype=float)
        A, B = X[rows], X[cols]
        if self.kind == "euclidean":
            return cdist(A, B, "euclidean")
        if self.kind == "weighted-euclidean":
            return cdist(A, B, "euclidean", w=self.weights)
        return (A[:, None, :] != B[None, :, :]).sum(axis=2).astype(float)

    def check_triangle(self, full: bool = False, samples: int = 10_000, seed: int = 0) -> None:
        """Spot-check the triangle inequality of a precomputed matrix.

        Samples ``min(n**3, samples)`` triples; ``full=True`` checks all of them.
        """
        if self.kind != "precomputed":
            return
        m = self.matrix
        n = m.shape[0]
        if full:
            for k in range(n):
                # d(i,k) <= d(i,j) + d(j,k) for all i, j
                bad = m[:, k][:, None] > m + m[:, k][None, :] + TRIANGLE_TOL
                if np.any(bad):
                    i, j = np.argwhere(bad)[0]
                    raise ValueError(f"triangle inequality fails for triple ({i}, {j}, {k})")
            return
        rng = np.random.default_rng(seed)
        count = min(n**3, samples)
        i, j, k = rng.integers(0, n, size=(3, count))
        bad = m[i, k] > m[i, j] + m[j, k] + TRIANGLE_TOL
        if np.any(bad):
            idx = int(np.argmax(bad))
            raise ValueError(f"triangle inequality fails for triple ({i[idx]}, {j[idx]}, {k[idx]})")

    def describe(self) -> dict:
        out = {"kind": self.kind}
        if self.weights is not None:
            out["weights"] = [float(w) for w in self.weights]
        return out


def distance(metric: Metric, i: int, j: int, X: np.ndarray) -> float:
    X = np.asarray(X, dtype=float)
    metric.check_shape(X)
    n = X.shape[0]
    if not (0 <= i < n and 0 <= j < n):
        raise IndexError(f"row index out of range for n={n}")
    if i == j:
        return 0.0
    return float(metric.cross(X, [i], [j])[0, 0])


def load_distance_matrix(path) -> Metric:
    """Read an n x n distance matrix (no header) written as CSV."""
    try:
        m = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise DatasetError(f"cannot parse distance matrix {path}: {exc}") from None
    return Metric.precomputed(m)


# ---------------------------------------------------------------------------
# Partial orders
# ---------------------------------------------------------------------------

ORDER_KINDS = ("coordinatewise", "single-coordinate", "explicit")


@dataclass(frozen=True, eq=False)
class PartialOrder:
    """Strict partial order on covariate rows.

    coordinatewise: x < y iff x_j <= y_j for all j, strictly for some j.
    single-coordinate: x < y iff x_index < y_index.
    explicit: the given list of (i, j) row pairs meaning X_i < X_j; must be
    irreflexive and transitively closed.
    """

    kind: str = "coordinatewise"
    index: int = 0
    pairs: tuple = ()

    def __post_init__(self):
        if self.kind not in ORDER_KINDS:
            raise ValueError(f"unknown order kind {self.kind!r}")
        if self.kind == "explicit":
            pairs = tuple((int(a), int(b)) for a, b in self.pairs)
            object.__setattr__(self, "pairs", pairs)
            pair_set = set(pairs)
            if any(a == b for a, b in pair_set):
                raise ValueError("explicit order is not irreflexive")
            succ: dict[int, set] = {}
            for a, b in pair_set:
                succ.setdefault(a, set()).add(b)
            for a, b in pair_set:
                for c in succ.get(b, ()):
                    if (a, c) not in pair_set:
                        raise ValueError(
                            f"explicit order is not transitive: ({a},{b}) and ({b},{c}) "
                            f"but not ({a},{c})"
                        )

    def relation(self, X: np.ndarray, rows, cols) -> np.ndarray:
        """Boolean matrix R with R[a, b] true iff row rows[a] precedes row cols[b]."""
        rows = np.asarray(rows, dtype=np.intp)
        cols = np.asarray(cols, dtype=np.intp)
        if self.kind == "explicit":
            R = np.zeros((rows.size, cols.size), dtype=bool)
            if not self.pairs:
                return R
            P = np.asarray(self.pairs, dtype=np.intp)
            rpos = {int(r): k for k, r in enumerate(rows)}
            cpos = {int(c): k for k, c in enumerate(cols)}
            for a, b in P:
                ra, cb = rpos.get(int(a)), cpos.get(int(b))
                if ra is not None and cb is not None:
                    R[ra, cb] = True
            return R
        if self.kind == "single-coordinate":
            return X[rows, self.index][:, None] < X[cols, self.index][None, :]
        A = X[rows][:, None, :]
        B = X[cols][None, :, :]
        return np.all(A <= B, axis=2) & np.any(A < B, axis=2)

    def describe(self) -> dict:
        if self.kind == "single-coordinate":
            return {"kind": self.kind, "index": self.index}
        if self.kind == "explicit":
            return {"kind": self.kind, "pairs": [list(p) for p in self.pairs]}
        return {"kind": self.kind}


# ---------------------------------------------------------------------------
# Assumptions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Lipschitz:
    L: float
    metric: Metric = field(default_factory=Metric.euclidean)

    def __post_init__(self):
        if not (self.L >= 0) or math.isnan(self.L):
            raise ValueError(f"Lipschitz constant must be nonnegative, got {self.L}")


@dataclass(frozen=True)
class AssumptionSet:
    """Which of boundedness, Lipschitz smoothness and monotonicity are asserted."""

    bounds: Optional[tuple] = None
    lipschitz: Optional[Lipschitz] = None
    monotone: Optional[PartialOrder] = None

    def __post_init__(self):
        if self.bounds is not None:
            lo, hi = (float(b) for b in self.bounds)
            if not lo <= hi:
                raise ValueError(f"bounds need lower <= upper, got [{lo}, {hi}]")
            object.__setattr__(self, "bounds", (lo, hi))
        if self.bounds is None and self.lipschitz is None and self.monotone is None:
            raise ValueError("at least one assumption must be asserted")

    @property
    def lower(self) -> float:
        return self.bounds[0] if self.bounds is not None else -math.inf

    @property
    def upper(self) -> float:
        return self.bounds[1] if self.bounds is not None else math.inf

    def with_L(self, L: float) -> "AssumptionSet":
        metric = self.lipschitz.metric if self.lipschitz is not None else Metric.euclidean()
        return AssumptionSet(self.bounds, Lipschitz(L, metric), self.monotone)

    def describe(self) -> dict:
        out: dict = {}
        if self.bounds is not None:
            out["bounds"] = list(self.bounds)
        if self.lipschitz is not None:
            L = self.lipschitz.L
            out["lipschitz"] = {
                "L": "inf" if is_infinite_L(L) else float(L),
                "metric": self.lipschitz.metric.describe(),
            }
        if self.monotone is not None:
            out["monotone"] = self.monotone.describe()
        return out


# ---------------------------------------------------------------------------
# Dataset and fitted outcome model
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LoggedDataset:
    """Logged data for one binarized action.

    ``outcome`` is only meaningful where ``action_taken`` is 1; elsewhere it
    may hold NaN.
    """

    covariates: np.ndarray
    behavior_prob: np.ndarray
    eval_prob: np.ndarray
    action_taken: np.ndarray
    outcome: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.covariates, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise DatasetError(f"covariates must be an n x p matrix with n, p >= 1, got {X.shape}")
        n = X.shape[0]
        bad = np.flatnonzero(~np.all(np.isfinite(X), axis=1))
        if bad.size:
            raise DatasetError("non-finite covariate", row=int(bad[0]))
        pb = np.asarray(self.behavior_prob, dtype=float).reshape(-1)
        pe = np.asarray(self.eval_prob, dtype=float).reshape(-1)
        a = np.asarray(self.action_taken).reshape(-1)
        y = np.asarray(self.outcome, dtype=float).reshape(-1)
        for name, v in (("behavior_prob", pb), ("eval_prob", pe), ("action_taken", a), ("outcome", y)):
            if v.shape[0] != n:
                raise DatasetError(f"{name} has length {v.shape[0]}, expected {n}")
        for name, v in (("behavior_prob", pb), ("eval_prob", pe)):
            bad = np.flatnonzero(~((v >= 0) & (v <= 1)))
            if bad.size:
                raise DatasetError(f"{name}={v[bad[0]]} outside [0, 1]", row=int(bad[0]))
        bad = np.flatnonzero(~np.isin(a, (0, 1)))
        if bad.size:
            raise DatasetError(f"action_taken={a[bad[0]]} not in {{0, 1}}", row=int(bad[0]))
        a = a.astype(np.int8)
        taken = a == 1
        bad = np.flatnonzero(taken & (pb <= 0))
        if bad.size:
            raise DatasetError("action observed with behavior_prob = 0", row=int(bad[0]))
        bad = np.flatnonzero(taken & ~np.isfinite(y))
        if bad.size:
            raise DatasetError("missing or non-finite outcome for an observed action", row=int(bad[0]))
        object.__setattr__(self, "covariates", _frozen(X))
        object.__setattr__(self, "behavior_prob", _frozen(pb))
        object.__setattr__(self, "eval_prob", _frozen(pe))
        object.__setattr__(self, "action_taken", _frozen(a))
        object.__setattr__(self, "outcome", _frozen(y))

    @property
    def n(self) -> int:
        return self.covariates.shape[0]

    @property
    def p(self) -> int:
        return self.covariates.shape[1]

    @property
    def overlap(self) -> np.ndarray:
        return self.behavior_prob > 0

    @property
    def overlap_rows(self) -> np.ndarray:
        return np.flatnonzero(self.behavior_prob > 0)

    @property
    def no_overlap_rows(self) -> np.ndarray:
        return np.flatnonzero(self.behavior_prob == 0)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.covariates).tobytes())
        h.update(np.ascontiguousarray(self.overlap).tobytes())
        return h.hexdigest()


@dataclass(frozen=True, eq=False)
class MuHat:
    """Fitted conditional-mean values, one per dataset row.

    Values on no-overlap rows may be NaN; the bound estimators never read them.
    """

    fitted_values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.fitted_values, dtype=float).reshape(-1)
        if np.any(np.isinf(v)):
            raise ValueError("fitted values must be finite")
        object.__setattr__(self, "fitted_values", _frozen(v))

    def __len__(self) -> int:
        return self.fitted_values.shape[0]

    @property
    def values(self) -> np.ndarray:
        return self.fitted_values


def prepare_mu(data: LoggedDataset, mu: MuHat, bounds=None, clamp: bool = False) -> MuHat:
    """Validate ``mu`` against ``data``; optionally clamp overlap values into ``bounds``."""
    if len(mu) != data.n:
        raise ValueError(f"mu has {len(mu)} values for {data.n} rows")
    v = mu.fitted_values
    ov = data.overlap
    bad = np.flatnonzero(ov & ~np.isfinite(v))
    if bad.size:
        raise DatasetError("fitted value missing on an overlap row", row=int(bad[0]))
    if bounds is None:
        return mu
    lo, hi = bounds
    outside = ov & ((v < lo) | (v > hi))
    if not np.any(outside):
        return mu
    if not clamp:
        i = int(np.flatnonzero(outside)[0])
        raise ValueError(
            f"row {i}: fitted value {v[i]} outside asserted bounds [{lo}, {hi}] "
            "(enable clamping to project it)"
        )
    out = v.copy()
    out[ov] = np.clip(out[ov], lo, hi)
    return MuHat(out)


# ---------------------------------------------------------------------------
# Feasibility of mu-hat under the assertions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FeasibilityReport:
    feasible: bool
    max_ratio: float
    L: Optional[float] = None
    worst_pair: Optional[tuple] = None
    worst_slack: Optional[float] = None
    monotone_violation: Optional[tuple] = None
    monotone_slack: Optional[float] = None
    n_pairs: int = 0

    @property
    def L_hint(self) -> float:
        """Smallest Lipschitz constant consistent with mu-hat on the overlap region."""
        return self.max_ratio

    def to_dict(self) -> dict:
        return {
            "feasible": self.feasible,
            "max_ratio": _json_float(self.max_ratio),
            "L": None if self.L is None else _json_float(self.L),
            "worst_pair": None if self.worst_pair is None else list(self.worst_pair),
            "worst_slack": None if self.worst_slack is None else _json_float(self.worst_slack),
            "monotone_violation": None
            if self.monotone_violation is None
            else list(self.monotone_violation),
            "monotone_slack": None if self.monotone_slack is None else _json_float(self.monotone_slack),
            "n_pairs": self.n_pairs,
        }


def _json_float(x: float):
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return float(x)


class FeasibilityProfile:
    """L-independent summary of mu-hat on overlap pairs.

    Computed once (O(n_overlap^2)); ``report(L)`` is then O(1), which keeps
    sweeps over L cheap and makes feasibility exactly monotone in L.
    """

    def __init__(self, data: LoggedDataset, mu: MuHat, metric: Optional[Metric] = None,
                 order: Optional[PartialOrder] = None, tol: float = FEASIBILITY_TOL):
        X = data.covariates
        ov = data.overlap_rows
        m = mu.fitted_values
        self.tol = tol
        self.n_pairs = ov.size * (ov.size - 1) // 2
        self.max_ratio = 0.0
        self.ratio_pair: Optional[tuple] = None
        self.ratio_gap = 0.0
        self.ratio_dist = 0.0
        # smallest L with gap <= L*d + tol on every pair
        self.L_required = 0.0
        self.zero_distance_conflict: Optional[tuple] = None
        self.monotone_violation: Optional[tuple] = None
        self.monotone_slack: Optional[float] = None
        self.has_metric = metric is not None

        if metric is not None and ov.size > 1:
            metric.check_shape(X)
            for sl in row_chunks(ov.size, ov.size):
                block = np.arange(sl.start, sl.stop)
                D = metric.cross(X, ov[sl], ov)
                G = np.abs(m[ov[sl]][:, None] - m[ov][None, :])
                upper = block[:, None] < np.arange(ov.size)[None, :]
                with np.errstate(divide="ignore", invalid="ignore"):
                    ratio = np.where(D > 0, G / D, np.where(G > 0, np.inf, 0.0))
                    need = np.where(D > 0, (G - tol) / D, 0.0)
                ratio = np.where(upper, ratio, -1.0)
                k = int(np.argmax(ratio))
                a, b = divmod(k, ov.size)
                if ratio[a, b] > self.max_ratio:
                    self.max_ratio = float(ratio[a, b])
                    self.ratio_pair = (int(ov[block[a]]), int(ov[b]))
                    self.ratio_gap = float(G[a, b])
                    self.ratio_dist = float(D[a, b])
                need = np.where(upper, need, 0.0)
                self.L_required = max(self.L_required, float(need.max()))
                conflict = upper & (D == 0) & (G > tol)
                if self.zero_distance_conflict is None and np.any(conflict):
                    a, b = np.argwhere(conflict)[0]
                    self.zero_distance_conflict = (int(ov[block[a]]), int(ov[b]))

        if order is not None and ov.size > 1:
            worst = -math.inf
            for sl in row_chunks(ov.size, ov.size):
                R = order.relation(X, ov[sl], ov)
                if not np.any(R):
                    continue
                diff = np.where(R, m[ov[sl]][:, None] - m[ov][None, :], -math.inf)
                k = int(np.argmax(diff))
                a, b = divmod(k, ov.size)
                if diff[a, b] > worst:
                    worst = float(diff[a, b])
                    pair = (int(ov[sl][a]), int(ov[b]))
            if worst > tol:
                self.monotone_violation = pair
                self.monotone_slack = -worst

    def feasible_at(self, L: Optional[float]) -> bool:
        if self.monotone_violation is not None:
            return False
        if L is None or not self.has_metric or is_infinite_L(L):
            return True
        if self.zero_distance_conflict is not None:
            return False
        return L >= self.L_required

    def report(self, L: Optional[float] = None) -> FeasibilityReport:
        feasible = self.feasible_at(L)
        worst_pair = worst_slack = None
        if L is not None and self.has_metric and not is_infinite_L(L):
            if self.zero_distance_conflict is not None:
                worst_pair = self.zero_distance_conflict
                worst_slack = -math.inf
            elif self.ratio_pair is not None:
                worst_pair = self.ratio_pair
                worst_slack = L * self.ratio_dist - self.ratio_gap
        return FeasibilityReport(
            feasible=feasible,
            max_ratio=self.max_ratio,
            L=L,
            worst_pair=worst_pair,
            worst_slack=worst_slack,
            monotone_violation=self.monotone_violation,
            monotone_slack=self.monotone_slack,
            n_pairs=self.n_pairs,
        )


def check_feasibility(data: LoggedDataset, mu: MuHat, assumptions: AssumptionSet) -> FeasibilityReport:
    """Check mu-hat against every asserted constraint on pairs of overlap rows."""
    lip = assumptions.lipschitz
    profile = FeasibilityProfile(
        data,
        mu,
        metric=lip.metric if lip is not None else None,
        order=assumptions.monotone,
    )
    return profile.report(lip.L if lip is not None else None)


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

SCHEMA_ROLES = ("covariates", "behavior_prob", "eval_prob", "action", "outcome", "mu_hat")


@dataclass(frozen=True)
class Schema:
    """Column names for each role. ``covariates`` is a list of column names."""

    covariates: tuple
    behavior_prob: str = "pb"
    eval_prob: str = "pe"
    action: str = "a"
    outcome: str = "y"
    mu_hat: Optional[str] = None

    @classmethod
    def from_mapping(cls, mapping: Mapping) -> "Schema":
        unknown = set(mapping) - set(SCHEMA_ROLES)
        if unknown:
            raise ValueError(f"unknown schema roles: {sorted(unknown)}")
        kw = dict(mapping)
        cov = kw.get("covariates")
        if cov is None:
            raise ValueError("schema needs a 'covariates' column list")
        kw["covariates"] = (cov,) if isinstance(cov, str) else tuple(cov)
        return cls(**kw)


def _parse_float(text: str, line: int, column: str, allow_empty: bool = False) -> float:
    text = text.strip()
    if text == "":
        if allow_empty:
            return math.nan
        raise DatasetError(f"line {line}: empty value in column {column!r}")
    try:
        value = float(text)
    except ValueError:
        raise DatasetError(f"line {line}: cannot parse {text!r} in column {column!r}") from None
    if not math.isfinite(value):
        raise DatasetError(f"line {line}: non-finite value {text!r} in column {column!r}")
    return value


def load_dataset(path, schema) -> tuple[LoggedDataset, Optional[MuHat]]:
    """Read a logged dataset from CSV.

    Returns the dataset and, when the schema names a ``mu_hat`` column, the
    fitted values (empty cells become NaN, allowed only on no-overlap rows).
    """
    if not isinstance(schema, Schema):
        schema = Schema.from_mapping(schema)
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        cols = {name: k for k, name in enumerate(header)}
        wanted = list(schema.covariates) + [schema.behavior_prob, schema.eval_prob, schema.action, schema.outcome]
        if schema.mu_hat is not None:
            wanted.append(schema.mu_hat)
        missing = [c for c in wanted if c not in cols]
        if missing:
            raise DatasetError(f"{path}: columns not found: {missing}")
        X, pb, pe, a, y, mu = [], [], [], [], [], []
        for line, rec in enumerate(reader, start=2):
            if not rec or all(not f.strip() for f in rec):
                continue
            if len(rec) != len(header):
                raise DatasetError(f"line {line}: expected {len(header)} fields, got {len(rec)}")
            X.append([_parse_float(rec[cols[c]], line, c) for c in schema.covariates])
            pb.append(_parse_float(rec[cols[schema.behavior_prob]], line, schema.behavior_prob))
            pe.append(_parse_float(rec[cols[schema.eval_prob]], line, schema.eval_prob))
            act = _parse_float(rec[cols[schema.action]], line, schema.action)
            if act not in (0.0, 1.0):
                raise DatasetError(f"line {line}: action must be 0 or 1, got {act}")
            a.append(int(act))
            raw_y = rec[cols[schema.outcome]]
            if act == 1:
                y.append(_parse_float(raw_y, line, schema.outcome))
            else:
                y.append(_parse_float(raw_y, line, schema.outcome, allow_empty=True) if raw_y.strip() else math.nan)
            if schema.mu_hat is not None:
                mu.append(_parse_float(rec[cols[schema.mu_hat]], line, schema.mu_hat, allow_empty=True))
    if not X:
        raise DatasetError(f"{path}: no data rows")
    try:
        data = LoggedDataset(np.array(X), np.array(pb), np.array(pe), np.array(a), np.array(y))
    except DatasetError as exc:
        if exc.row is not None:
            raise DatasetError(f"{path}: line {exc.row + 2}: {exc.args[0]}", row=exc.row) from None
        raise
    mu_hat = MuHat(np.array(mu)) if schema.mu_hat is not None else None
    return data, mu_hat


def save_dataset(path, data: LoggedDataset, mu: Optional[MuHat] = None,
                 covariate_names: Optional[Sequence[str]] = None) -> Schema:
    """Write ``data`` as CSV readable by :func:`load_dataset`; returns the schema used."""
    names = list(covariate_names) if covariate_names else [f"x{j + 1}" for j in range(data.p)]
    schema = Schema(tuple(names), mu_hat="mu_hat" if mu is not None else None)
    header = names + ["pb", "pe", "a", "y"] + (["mu_hat"] if mu is not None else [])
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(data.n):
            row = [repr(float(v)) for v in data.covariates[i]]
            row += [repr(float(data.behavior_prob[i])), repr(float(data.eval_prob[i])), str(int(data.action_taken[i]))]
            yi = data.outcome[i]
            row.append(repr(float(yi)) if np.isfinite(yi) else "")
            if mu is not None:
                mi = mu.fitted_values[i]
                row.append(repr(float(mi)) if np.isfinite(mi) else "")
            w.writerow(row)
    return schema
