"""Exact solver for the sample bound LPs as difference-constraint systems.

Every constraint in those LPs has the form ``t_i - t_j <= c`` (Lipschitz pairs
give two such edges, a monotone pair ``X_i < X_j`` gives ``t_i - t_j <= 0``),
plus pins ``t_i = mu_i`` on overlap rows and an optional box. The feasible set
is closed under pointwise min and max, so the pointwise-smallest feasible
vector minimises every objective with nonnegative weights. It is found by
Bellman-Ford style relaxation of lower bounds from the pins and the box floor.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, TextIO

import numpy as np

from .data import (
    FEASIBILITY_TOL,
    AssumptionSet,
    LoggedDataset,
    Metric,
    MuHat,
    is_infinite_L,
    row_chunks,
)

# Lazy Lipschitz systems up to this size keep the full distance matrix.
_DENSE_CACHE_NODES = 2048


@dataclass(frozen=True, eq=False)
class LazyLipschitz:
    """All-pairs Lipschitz edges ``|t_i - t_j| <= L d(X_i, X_j)``, evaluated on the fly."""

    X: np.ndarray
    metric: Metric
    L: float


@dataclass(frozen=True, eq=False)
class ConstraintSystem:
    n: int
    pin_nodes: np.ndarray
    pin_values: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    cost: np.ndarray
    weights: np.ndarray
    box: Optional[tuple] = None
    lipschitz: Optional[LazyLipschitz] = None

    def __post_init__(self):
        pin_nodes = np.asarray(self.pin_nodes, dtype=np.intp).reshape(-1)
        pin_values = np.asarray(self.pin_values, dtype=float).reshape(-1)
        src = np.asarray(self.src, dtype=np.intp).reshape(-1)
        dst = np.asarray(self.dst, dtype=np.intp).reshape(-1)
        cost = np.asarray(self.cost, dtype=float).reshape(-1)
        weights = np.asarray(self.weights, dtype=float).reshape(-1)
        if pin_nodes.shape != pin_values.shape:
            raise ValueError("pin_nodes and pin_values differ in length")
        if np.unique(pin_nodes).size != pin_nodes.size:
            raise ValueError("a node is pinned twice")
        if not (src.shape == dst.shape == cost.shape):
            raise ValueError("edge arrays differ in length")
        for name, idx in (("pin", pin_nodes), ("edge source", src), ("edge target", dst)):
            if idx.size and (idx.min() < 0 or idx.max() >= self.n):
                raise ValueError(f"{name} index out of range for n={self.n}")
        if not np.all(np.isfinite(pin_values)):
            raise ValueError("pinned values must be finite")
        if not np.all(np.isfinite(cost)):
            raise ValueError("edge costs must be finite")
        if weights.shape != (self.n,) or np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise ValueError("objective weights must be a finite nonnegative vector of length n")
        if self.box is not None:
            lo, hi = self.box
            if not lo <= hi:
                raise ValueError("box needs lower <= upper")
        if self.lipschitz is not None and self.lipschitz.X.shape[0] != self.n:
            raise ValueError("lazy Lipschitz covariates do not match node count")
        for name, v in (("pin_nodes", pin_nodes), ("pin_values", pin_values), ("src", src),
                        ("dst", dst), ("cost", cost), ("weights", weights)):
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    @property
    def pinned(self) -> dict:
        return {int(i): float(v) for i, v in zip(self.pin_nodes, self.pin_values)}

    @property
    def n_edges(self) -> int:
        extra = 0 if self.lipschitz is None else self.n * (self.n - 1)
        return int(self.src.size) + extra

    def edges(self):
        """Iterate all (i, j, c) triples meaning t_i - t_j <= c, including lazy ones."""
        for i, j, c in zip(self.src, self.dst, self.cost):
            yield int(i), int(j), float(c)
        if self.lipschitz is not None:
            lz = self.lipschitz
            pinned = np.zeros(self.n, dtype=bool)
            pinned[self.pin_nodes] = True
            nodes = np.arange(self.n)
            for sl in row_chunks(self.n, self.n):
                D = lz.metric.cross(lz.X, nodes[sl], nodes)
                for a, i in enumerate(nodes[sl]):
                    for j in range(self.n):
                        if i != j and not (pinned[i] and pinned[j]):
                            yield int(i), int(j), float(lz.L * D[a, j])

    def negated(self) -> "ConstraintSystem":
        """System in s = -t: maximising t is minimising s."""
        box = None if self.box is None else (-self.box[1], -self.box[0])
        return ConstraintSystem(self.n, self.pin_nodes, -self.pin_values, self.dst, self.src,
                                self.cost, self.weights, box, self.lipschitz)


@dataclass(frozen=True)
class InfeasibilityWitness:
    kind: str  # "pin", "box" or "cycle"
    node: int
    required: float
    limit: float
    path: tuple = ()

    def describe(self) -> str:
        chain = " -> ".join(str(p) for p in self.path)
        if self.kind == "cycle":
            return f"constraint cycle with positive gain through node {self.node} (path {chain})"
        return (f"node {self.node} must be >= {self.required:.12g} but its {self.kind} "
                f"limit is {self.limit:.12g} (path {chain})")


@dataclass(frozen=True, eq=False)
class LpSolution:
    t: Optional[np.ndarray]
    objective: float
    status: str  # "optimal" or "infeasible"
    rounds: int = 0
    witness: Optional[InfeasibilityWitness] = None
    unbounded_nodes: tuple = field(default=())

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def _objective(weights: np.ndarray, t: np.ndarray) -> float:
    active = weights > 0
    if not np.any(active):
        return 0.0
    return float(np.sum(weights[active] * t[active]))


def _trace(pred: np.ndarray, node: int) -> tuple:
    path = [node]
    seen = {node}
    while pred[path[-1]] >= 0:
        nxt = int(pred[path[-1]])
        path.append(nxt)
        if nxt in seen:
            break
        seen.add(nxt)
    return tuple(reversed(path))


class _LazyRelaxer:
    """max over sources s of lb[s] - L d(s, t), skipping pinned-pinned pairs."""

    def __init__(self, lz: LazyLipschitz, pinned: np.ndarray):
        self.lz = lz
        self.pinned = pinned
        n = pinned.size
        self.nodes = np.arange(n)
        self.D = None
        if n <= _DENSE_CACHE_NODES:
            self.D = lz.metric.cross(lz.X, self.nodes, self.nodes)

    def __call__(self, lb: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        n = lb.size
        best = np.full(n, -math.inf)
        arg = np.full(n, -1, dtype=np.intp)
        L = self.lz.L
        for sl in row_chunks(n, n):
            D = self.D[sl] if self.D is not None else self.lz.metric.cross(self.lz.X, self.nodes[sl], self.nodes)
            cand = lb[None, :] - L * D
            both = self.pinned[sl][:, None] & self.pinned[None, :]
            cand[both] = -math.inf
            cand[np.arange(cand.shape[0]), self.nodes[sl]] = -math.inf
            k = np.argmax(cand, axis=1)
            best[sl] = cand[np.arange(k.size), k]
            arg[sl] = k
        return best, arg


def _find_cycle(sys: ConstraintSystem, relax_lazy, tol: float) -> Optional[InfeasibilityWitness]:
    """Positive-gain cycle anywhere in the graph, found by relaxing from an all-zero start.

    Only negative edge costs can close such a cycle, and a cycle that no pin or
    box floor reaches would otherwise go unnoticed.
    """
    n = sys.n
    lb = np.zeros(n)
    pred = np.full(n, -1, dtype=np.intp)
    for _ in range(n + 1):
        new = lb.copy()
        cand = lb[sys.src] - sys.cost
        np.maximum.at(new, sys.dst, cand)
        if relax_lazy is not None:
            best, _ = relax_lazy(lb)
            new = np.maximum(new, best)
        improved = new > lb + tol
        if not np.any(improved):
            return None
        hit = improved[sys.dst] & (cand == new[sys.dst])
        pred[sys.dst[hit]] = sys.src[hit]
        lb = np.where(improved, new, lb)
    node = int(np.flatnonzero(improved)[0])
    return InfeasibilityWitness("cycle", node, float(lb[node]), math.inf, _trace(pred, node))


def solve_min(sys: ConstraintSystem, tol: float = FEASIBILITY_TOL) -> LpSolution:
    """Pointwise-smallest feasible t (hence the minimiser of any nonnegative objective)."""
    n = sys.n
    lo, hi = sys.box if sys.box is not None else (-math.inf, math.inf)
    lb = np.full(n, float(lo))
    pred = np.full(n, -1, dtype=np.intp)
    pinned = np.zeros(n, dtype=bool)
    pinned[sys.pin_nodes] = True
    for node, v in zip(sys.pin_nodes, sys.pin_values):
        if v < lo - tol or v > hi + tol:
            return LpSolution(None, math.nan, "infeasible",
                              witness=InfeasibilityWitness("box", int(node), float(v), float(hi if v > hi else lo), (int(node),)))
    lb[sys.pin_nodes] = sys.pin_values
    relax_lazy = _LazyRelaxer(sys.lipschitz, pinned) if sys.lipschitz is not None else None
    if np.any(sys.cost < 0):
        witness = _find_cycle(sys, relax_lazy, tol)
        if witness is not None:
            return LpSolution(None, math.nan, "infeasible", witness=witness)

    rounds = 0
    while True:
        new = lb.copy()
        if sys.src.size:
            cand = lb[sys.src] - sys.cost
            np.maximum.at(new, sys.dst, cand)
        from_lazy = np.zeros(n, dtype=bool)
        if relax_lazy is not None:
            best, arg = relax_lazy(lb)
            from_lazy = best > new
            new[from_lazy] = best[from_lazy]
        improved = new > lb
        if np.any(improved):
            if relax_lazy is not None:
                take = improved & from_lazy
                pred[take] = arg[take]
            if sys.src.size:
                hit = improved[sys.dst] & ~from_lazy[sys.dst] & (cand == new[sys.dst])
                pred[sys.dst[hit]] = sys.src[hit]
        over = pinned & (new > lb + tol)
        if np.any(over):
            node = int(np.flatnonzero(over)[0])
            limit = float(lb[node])
            return LpSolution(None, math.nan, "infeasible", rounds + 1,
                              InfeasibilityWitness("pin", node, float(new[node]), limit, _trace(pred, node)))
        new[pinned] = lb[pinned]
        pred[pinned] = -1
        over = new > hi + tol
        if np.any(over):
            node = int(np.flatnonzero(over)[0])
            return LpSolution(None, math.nan, "infeasible", rounds + 1,
                              InfeasibilityWitness("box", node, float(new[node]), float(hi), _trace(pred, node)))
        improved = new > lb
        if not np.any(improved):
            break
        lb = new
        rounds += 1
        if rounds > n:
            node = int(np.flatnonzero(improved)[0])
            return LpSolution(None, math.nan, "infeasible", rounds,
                              InfeasibilityWitness("cycle", node, float(lb[node]), math.inf, _trace(pred, node)))
    unbounded = tuple(int(i) for i in np.flatnonzero(np.isneginf(lb) & (sys.weights > 0)))
    objective = -math.inf if unbounded else _objective(sys.weights, lb)
    return LpSolution(lb, objective, "optimal", rounds, unbounded_nodes=unbounded)


def solve_max(sys: ConstraintSystem, tol: float = FEASIBILITY_TOL) -> LpSolution:
    """Pointwise-largest feasible t (the maximiser of any nonnegative objective)."""
    sol = solve_min(sys.negated(), tol)
    if not sol.optimal:
        return sol
    t = -sol.t
    return LpSolution(t, -sol.objective, "optimal", sol.rounds, unbounded_nodes=sol.unbounded_nodes)


def max_violation(sys: ConstraintSystem, t: np.ndarray) -> float:
    """Largest constraint violation of ``t`` (<= 0 means feasible). Infinite entries are skipped."""
    t = np.asarray(t, dtype=float)
    worst = -math.inf
    finite = np.isfinite(t)
    if sys.pin_nodes.size:
        worst = max(worst, float(np.max(np.abs(t[sys.pin_nodes] - sys.pin_values))))
    if sys.box is not None:
        lo, hi = sys.box
        worst = max(worst, float(np.max(np.where(finite, np.maximum(lo - t, t - hi), -math.inf))))
    if sys.src.size:
        ok = finite[sys.src] & finite[sys.dst]
        if np.any(ok):
            worst = max(worst, float(np.max((t[sys.src] - t[sys.dst] - sys.cost)[ok])))
    if sys.lipschitz is not None:
        lz = sys.lipschitz
        idx = np.flatnonzero(finite)
        pinned = np.zeros(sys.n, dtype=bool)
        pinned[sys.pin_nodes] = True
        for sl in row_chunks(idx.size, idx.size):
            D = lz.metric.cross(lz.X, idx[sl], idx)
            gap = np.abs(t[idx[sl]][:, None] - t[idx][None, :]) - lz.L * D
            gap[pinned[idx[sl]][:, None] & pinned[idx][None, :]] = -math.inf
            if gap.size:
                worst = max(worst, float(gap.max()))
    return worst


def build_system(data: LoggedDataset, mu: MuHat, assumptions: AssumptionSet,
                 materialize: Optional[bool] = None) -> ConstraintSystem:
    """Constraint system of the sample LP for ``assumptions``.

    Pure Lipschitz systems stay lazy (O(n) memory) unless ``materialize`` is
    true; systems with a monotone order always get explicit edges. Constraints
    between two overlap rows are left out: both ends are pinned, and their
    consistency is the job of the feasibility check.
    """
    n = data.n
    ov = data.overlap
    pins = data.overlap_rows
    pin_values = mu.fitted_values[pins]
    weights = np.where(ov, 0.0, data.eval_prob) / n
    lip = assumptions.lipschitz
    if lip is not None and is_infinite_L(lip.L):
        lip = None
    if lip is not None:
        lip.metric.check_shape(data.covariates)
    order = assumptions.monotone
    if materialize is None:
        materialize = order is not None
    src, dst, cost = [], [], []
    lazy = None
    X = data.covariates
    nodes = np.arange(n)
    if lip is not None and not materialize:
        lazy = LazyLipschitz(X, lip.metric, float(lip.L))
    for sl in row_chunks(n, n):
        block = nodes[sl]
        keep = ~(ov[block][:, None] & ov[None, :])
        if lip is not None and materialize:
            D = lip.metric.cross(X, block, nodes)
            mask = keep & (block[:, None] < nodes[None, :])
            a, b = np.nonzero(mask)
            c = lip.L * D[a, b]
            src += [block[a], b]
            dst += [b, block[a]]
            cost += [c, c]
        if order is not None:
            R = order.relation(X, block, nodes) & keep
            a, b = np.nonzero(R)
            src.append(block[a])
            dst.append(b)
            cost.append(np.zeros(a.size))
    cat = lambda parts, dtype: np.concatenate(parts).astype(dtype) if parts else np.zeros(0, dtype=dtype)
    return ConstraintSystem(
        n=n,
        pin_nodes=pins,
        pin_values=pin_values,
        src=cat(src, np.intp),
        dst=cat(dst, np.intp),
        cost=cat(cost, float),
        weights=weights,
        box=assumptions.bounds,
        lipschitz=lazy,
    )


def dump(sys: ConstraintSystem, fh: TextIO) -> None:
    """Write the constraint graph as plain text: header, box, pins, weights, edges."""
    fh.write(f"nodes {sys.n}\n")
    if sys.box is not None:
        fh.write(f"box {sys.box[0]!r} {sys.box[1]!r}\n")
    for i, v in zip(sys.pin_nodes, sys.pin_values):
        fh.write(f"pin {int(i)} {float(v)!r}\n")
    for i, w in enumerate(sys.weights):
        if w > 0:
            fh.write(f"weight {i} {float(w)!r}\n")
    for i, j, c in sys.edges():
        fh.write(f"edge {i} {j} {c!r}\n")
