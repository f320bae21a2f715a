import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from pidope import AssumptionSet, Lipschitz, Metric, MuHat, PartialOrder, lipschitz_bounds
from pidope.propagation import ConstraintSystem, build_system, dump, max_violation, solve_max, solve_min

from conftest import lipschitz_instance, make_dataset

E = Metric.euclidean()


def chained_instance():
    X = np.array([[0.0, 0.0], [1.0, 1.0], [1.2, -0.01]])
    data = make_dataset(X, [True, False, False])
    order = PartialOrder("explicit", pairs=((0, 1),))
    return data, MuHat([0.0, np.nan, np.nan]), AssumptionSet(None, Lipschitz(1.0, E), order)


def test_figure_two_instance():
    data = make_dataset([0.0, 1.0, 2.0], [True, False, False])
    sys = build_system(data, MuHat([1.0, np.nan, np.nan]), AssumptionSet(None, Lipschitz(1.0, E)))
    sol = solve_min(sys)
    assert sol.optimal
    np.testing.assert_allclose(sol.t, [1.0, 0.0, -1.0], atol=1e-12)
    np.testing.assert_allclose(solve_max(sys).t, [1.0, 2.0, 3.0], atol=1e-12)


def test_chained_instance_propagates_through_monotone_edge():
    data, mu, assumptions = chained_instance()
    sol = solve_min(build_system(data, mu, assumptions))
    assert sol.t[1] == pytest.approx(0.0, abs=1e-12)
    assert sol.t[2] == pytest.approx(-math.hypot(0.2, 1.01), abs=1e-12)
    assert sol.t[2] > -math.hypot(1.2, 0.01) + 0.17


def test_contradictory_cycle():
    sys = ConstraintSystem(2, [0], [0.0], [1, 0], [0, 1], [-1.0, -1.0], [0.0, 1.0])
    sol = solve_min(sys)
    assert sol.status == "infeasible" and sol.witness is not None
    assert sol.witness.describe()


def test_unpinned_cycle_detected():
    sys = ConstraintSystem(3, [0], [0.0], [1, 2], [2, 1], [-1.0, -1.0], [0.0, 1.0, 1.0], box=None)
    assert solve_min(sys).status == "infeasible"


def test_box_infeasible_pin():
    sys = ConstraintSystem(2, [0], [2.0], [], [], [], [0.0, 1.0], box=(0.0, 1.0))
    sol = solve_min(sys)
    assert not sol.optimal and sol.witness.kind == "box"


def test_unbounded_without_box_or_reachable_pin():
    sys = ConstraintSystem(2, [0], [0.0], [], [], [], [0.0, 1.0])
    sol = solve_min(sys)
    assert sol.optimal and sol.objective == -math.inf and sol.unbounded_nodes == (1,)


def test_invalid_system():
    with pytest.raises(ValueError):
        ConstraintSystem(2, [0, 0], [0.0, 1.0], [], [], [], [0.0, 1.0])
    with pytest.raises(ValueError):
        ConstraintSystem(2, [0], [0.0], [0], [5], [1.0], [0.0, 1.0])
    with pytest.raises(ValueError):
        ConstraintSystem(2, [0], [0.0], [], [], [], [0.0, -1.0])


def test_dump_lists_every_edge():
    data, mu, assumptions = chained_instance()
    sys = build_system(data, mu, assumptions)
    fh = io.StringIO()
    dump(sys, fh)
    text = fh.getvalue()
    assert text.startswith("nodes 3\n") and "pin 0 0.0" in text
    assert text.count("edge ") == sys.n_edges


def random_system(rng, n, p, monotone, boxed):
    X = rng.random((n, p))
    overlap = rng.random(n) < 0.4
    overlap[0] = True
    vals = X.sum(axis=1) / p  # nondecreasing and 1-Lipschitz in the chosen setups
    data = make_dataset(X, overlap)
    mu = MuHat(np.where(overlap, vals, np.nan))
    order = PartialOrder() if monotone else None
    assumptions = AssumptionSet((-1.0, 2.0) if boxed else None, Lipschitz(1.0, E), order)
    return data, mu, assumptions


def lp_oracle(sys, sense):
    rows, rhs = [], []
    for i, j, c in sys.edges():
        r = np.zeros(sys.n)
        r[i], r[j] = 1.0, -1.0
        rows.append(r)
        rhs.append(c)
    bnds = [(sys.box if sys.box else (None, None)) for _ in range(sys.n)]
    for i, v in sys.pinned.items():
        bnds[i] = (v, v)
    c = sys.weights if sense == "min" else -sys.weights
    res = linprog(c, A_ub=np.array(rows) if rows else None, b_ub=rhs if rows else None, bounds=bnds,
                  method="highs")
    assert res.status == 0
    return res.fun if sense == "min" else -res.fun


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 12), st.sampled_from([1, 2]), st.booleans(), st.booleans())
def test_solver_properties(seed, n, p, monotone, boxed):
    rng = np.random.default_rng(seed)
    data, mu, assumptions = random_system(rng, n, p, monotone, boxed)
    sys = build_system(data, mu, assumptions, materialize=True)
    lo, hi = solve_min(sys), solve_max(sys)
    assert lo.optimal and hi.optimal
    assert lo.rounds <= n
    assert max_violation(sys, lo.t) <= 1e-9 and max_violation(sys, hi.t) <= 1e-9
    np.testing.assert_array_equal(lo.t[sys.pin_nodes], sys.pin_values)
    assert lo.objective <= hi.objective
    if boxed:
        assert lo.objective == pytest.approx(lp_oracle(sys, "min"), abs=1e-7)
        assert hi.objective == pytest.approx(lp_oracle(sys, "max"), abs=1e-7)
    # extremality: lowering any free node breaks a constraint
    free = np.setdiff1d(np.arange(n), sys.pin_nodes)
    for i in free:
        t = lo.t.copy()
        t[i] -= 1e-6
        assert max_violation(sys, t) > 1e-9


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 30), st.sampled_from([1, 2, 5]))
def test_lazy_matches_materialized(seed, n, p):
    rng = np.random.default_rng(seed)
    data, mu = lipschitz_instance(rng, n, p, 1.0, box=(0.0, 1.0))
    assumptions = AssumptionSet((0.0, 1.0), Lipschitz(1.5, E))
    a = solve_min(build_system(data, mu, assumptions))
    b = solve_min(build_system(data, mu, assumptions, materialize=True))
    np.testing.assert_allclose(a.t, b.t, atol=1e-12)
    cf = lipschitz_bounds(data, mu, 1.5, E, (0.0, 1.0))
    assert a.objective == pytest.approx(cf.lower, abs=1e-9)
