"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line."""
import json
import math
import time

import numpy as np
import pytest

import pidope.engine as engine
from pidope import (
    L_INFINITY,
    AssumptionSet,
    Lipschitz,
    Metric,
    MuHat,
    Options,
    PartialOrder,
    evaluate,
    evaluate_multi_action,
    lipschitz_bounds,
    manski_bounds,
    route,
    sweep_L,
)
from pidope.cli import main
from pidope.data import FeasibilityProfile
from pidope.harness import (
    ArticleClickModel,
    MeanFunction,
    SyntheticSpec,
    convert_multiclass,
    fit_mu,
    fit_policy,
    make_yeast_like,
    pilot_max_ratio,
    rate_study,
    simulate_coverage,
    threshold_policy_study,
    two_class_source,
)
from pidope.nn import build_nn_index, conservative_bounds
from pidope.propagation import build_system, solve_max, solve_min

from conftest import lipschitz_instance, make_dataset, record_acceptance

E = Metric.euclidean()


def random_instance(rng):
    n = int(rng.integers(2, 51))
    p = int(rng.choice([1, 2, 5]))
    box = (-1.0, 1.0) if rng.random() < 0.5 else None
    L_f = float(rng.uniform(0.2, 3.0))
    data, mu = lipschitz_instance(rng, n, p, L_f, box=box)
    L = L_f * float(rng.uniform(1.0, 3.0))
    return data, mu, L, box


def test_1_closed_form_equals_propagation():
    rng = np.random.default_rng(20240101)
    t0 = time.perf_counter()
    worst = 0.0
    count = 1200
    for _ in range(count):
        data, mu, L, box = random_instance(rng)
        cf = lipschitz_bounds(data, mu, L, E, box)
        sys = build_system(data, mu, AssumptionSet(box, Lipschitz(L, E)))
        lo, hi = solve_min(sys), solve_max(sys)
        assert lo.optimal and hi.optimal
        worst = max(worst, abs(cf.lower - lo.objective), abs(cf.upper - hi.objective))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-9 and elapsed < 30
    record_acceptance(1, ok, f"{count} instances, max |closed form - solver| = {worst:.2e}, {elapsed:.1f} s")
    assert worst <= 1e-9
    assert elapsed < 30


def test_2_mixed_assumptions_need_the_solver(monkeypatch):
    X = np.array([[0.0, 0.0], [1.0, 1.0], [1.2, -0.01]])
    data = make_dataset(X, [True, False, False])
    mu = MuHat([0.0, np.nan, np.nan])
    assumptions = AssumptionSet(None, Lipschitz(1.0, E), PartialOrder("explicit", pairs=((0, 1),)))
    t = solve_min(build_system(data, mu, assumptions)).t
    single_hop = lipschitz_bounds(data, mu, 1.0, E, check=False).per_point_lower[1]

    def refuse(*args, **kwargs):
        raise AssertionError("closed form called for Lipschitz plus monotone")

    monkeypatch.setattr(engine, "lipschitz_bounds", refuse)
    monkeypatch.setattr(engine, "monotone_bounds", refuse)
    result = evaluate(data, mu, assumptions)
    gap = t[2] - single_hop
    ok = (abs(t[2] - (-1.02956)) < 1e-4 and abs(single_hop - (-1.20004)) < 1e-4 and gap > 0.17
          and abs(t[1]) < 1e-12 and route(assumptions) == "propagation"
          and result.method_used == "propagation"
          and result.psi2.per_point_lower[1] == t[2])
    record_acceptance(2, ok, f"t3 = {t[2]:.5f}, single hop = {single_hop:.5f}, gap = {gap:.5f}, "
                             f"method = {result.method_used}")
    assert t[2] == pytest.approx(-1.02956, abs=1e-4)
    assert single_hop == pytest.approx(-1.20004, abs=1e-4)
    assert gap > 0.17 and abs(t[1]) < 1e-12
    assert route(assumptions) == "propagation" and result.method_used == "propagation"
    assert result.psi2.per_point_lower[1] == t[2]


def test_3_sentinel_is_manski():
    rng = np.random.default_rng(3)
    exact = nested = 0
    count = 100
    for _ in range(count):
        n = int(rng.integers(2, 51))
        data, mu = lipschitz_instance(rng, n, int(rng.choice([1, 2, 5])), 1.0, box=(0.0, 1.0))
        s = sweep_L(data, mu, AssumptionSet((0.0, 1.0), Lipschitz(1.0, E)), [1.0, 2.0, 4.0, L_INFINITY])
        m = manski_bounds(data, 0.0, 1.0)
        last = s.cells[-1].result
        exact += last.psi2.lower == m.lower and last.psi2.upper == m.upper
        ivs = [c.result.interval for c in s.cells]
        mono = all(a[0] >= b[0] and a[1] <= b[1] for a, b in zip(ivs, ivs[1:]))
        nested += s.nested and mono and all(c.feasible for c in s.cells)
    ok = exact == count and nested == count
    record_acceptance(3, ok, f"sentinel == manski on {exact}/{count}, nested sweeps {nested}/{count}")
    assert exact == count and nested == count


def test_4_conservative_contains_exact():
    rng = np.random.default_rng(4)
    contained = reuse_equal = 0
    count = 1000
    for _ in range(count):
        data, mu, L, box = random_instance(rng)
        index = build_nn_index(data, E)
        c = conservative_bounds(index, data, mu, L, box)
        e = lipschitz_bounds(data, mu, L, E, box)
        contained += c.lower <= e.lower and c.upper >= e.upper
        grid = [L, 2 * L, 4 * L]
        s = sweep_L(data, mu, AssumptionSet(box, Lipschitz(L, E)), grid, Options(conservative=True))
        rebuilt = [conservative_bounds(build_nn_index(data, E), data, mu, g, box) for g in grid]
        reuse_equal += s.index_reused and all(
            r.psi2.lower == b.lower and r.psi2.upper == b.upper for r, b in zip(s.results, rebuilt))
    ok = contained == count and reuse_equal == count
    record_acceptance(4, ok, f"conservative contains exact on {contained}/{count}, "
                             f"reused index == rebuilt on {reuse_equal}/{count}")
    assert contained == count and reuse_equal == count


@pytest.fixture(scope="module")
def coverage_run():
    source = two_class_source(10.0)
    t0 = time.perf_counter()
    pilot = pilot_max_ratio(source, 2000, seed=1)
    valid_L = 2 * source.lipschitz
    low_L = 0.2 * pilot
    report = simulate_coverage(source, [2000], [low_L, valid_L], 200, 0.01, seed=0)
    return report, pilot, low_L, valid_L, time.perf_counter() - t0


def test_5_coverage(coverage_run):
    report, pilot, low_L, valid_L, elapsed = coverage_run
    cov = report.cell(2000, valid_L)["coverage"]
    feas_low = report.cell(2000, low_L)["feasibility_rate"]
    ok = cov >= 0.90 and feas_low <= 0.10 and elapsed < 300
    record_acceptance(5, ok, f"coverage {cov:.3f} at L={valid_L:g}, feasibility {feas_low:.3f} at "
                             f"L={low_L:.3g} (20% of pilot ratio {pilot:.3g}), {elapsed:.0f} s")
    assert cov >= 0.90
    assert feas_low <= 0.10
    assert elapsed < 300


@pytest.fixture(scope="module")
def rate_run():
    spec = SyntheticSpec(1, MeanFunction("linear", (0.5,), 0.2), noise_sd=0.3)
    return spec, rate_study(spec, [250, 1000, 4000], 200, L=1.0, seed=0)


def test_6_rate(rate_run):
    spec, res = rate_run
    target, m = spec.psi2_lower(1.0)
    refined = spec._psi2_lower_at(2 * m, 1.0, -math.inf)
    rel = abs(refined - target) / abs(target)
    decreasing = bool(np.all(np.diff(res.mse) < 0))
    ok = rel < 1e-3 and decreasing and res.slope <= -0.3
    record_acceptance(6, ok, f"quadrature change {rel:.1e}, MSE {', '.join(f'{v:.2e}' for v in res.mse)}, "
                             f"slope {res.slope:.2f}")
    assert rel < 1e-3
    assert decreasing
    assert res.slope <= -0.3


def test_6_oracle_fit_has_smaller_error(rate_run):
    _, res = rate_run
    assert np.all(res.mse_oracle < res.mse)


def test_7_threshold_policy_study():
    T_grid = [0.25, 0.3, 0.35, 0.4, 0.5]
    L_grid = [0.5, 1.0, 2.0, 4.0]
    res = threshold_policy_study(ArticleClickModel(), T_grid, L_grid, n=4000, seed=0)
    rows = {(r["T"], r["L"]): r for r in res.table}
    zero = all(rows[(0.5, L)]["width"] == 0.0 for L in L_grid)
    checked = [L for L in L_grid if all(rows[(T, L)]["feasible"] for T in T_grid)]
    decreasing = all(rows[(a, L)]["width"] > rows[(b, L)]["width"]
                     for L in checked for a, b in zip(T_grid, T_grid[1:]))
    inside = all(r["imputation_inside"] for r in res.table if r["mu_satisfies"])
    narrower = all(rows[(T, L)]["width"] < rows[(T, L)]["manski_width"]
                   for L in checked for T in T_grid[:-1])
    narrowing = [rows[(T, 1.0)]["narrowing_pct"] for T in T_grid[:-1]]
    ok = zero and 1.0 in checked and decreasing and inside and narrower and min(narrowing) >= 50
    record_acceptance(7, ok, f"zero width at T=0.5: {zero}, width decreasing in T at L={checked}: {decreasing}, "
                             f"imputation inside: {inside}, narrowing at L=1 "
                             f"{min(narrowing):.1f}-{max(narrowing):.1f}%")
    assert zero and 1.0 in checked
    assert decreasing and inside and narrower
    assert min(narrowing) >= 50


def test_8_multi_action_additivity():
    X, y = make_yeast_like(seed=0)
    P = fit_policy(X, y)
    conv = convert_multiclass(X, y, P, seed=8)
    mus = []
    for d in conv.datasets:
        mu, _ = fit_mu(d, "logistic")
        mus.append(MuHat(np.clip(mu.fitted_values, 0.0, 1.0)))
    need = max(FeasibilityProfile(d, m, metric=E).max_ratio for d, m in zip(conv.datasets, mus))
    assumptions = AssumptionSet((0.0, 1.0), Lipschitz(1.01 * need, E))
    multi = evaluate_multi_action(conv.datasets, mus, assumptions)
    parts = [evaluate(d, m, assumptions) for d, m in zip(conv.datasets, mus)]
    err = max(abs(multi.lower - sum(r.lower for r in parts)), abs(multi.upper - sum(r.upper for r in parts)))

    full = convert_multiclass(X, y, P, threshold=0.0, seed=8)
    assert all(np.all(d.overlap) for d in full.datasets)
    fm = evaluate_multi_action(full.datasets, [None] * 4, AssumptionSet((0.0, 1.0)), Options(estimator="ipw"))
    rows = np.arange(len(y))
    direct = float(np.mean(full.eval_probs[rows, full.actions] / full.behavior_probs[rows, full.actions]
                           * (full.actions == y)))
    ok = (err <= 1e-12 and fm.lower == fm.upper and abs(fm.lower - direct) <= 1e-12
          and conv.n_actions == 4)
    record_acceptance(8, ok, f"4 actions, endpoint sum error {err:.1e}, full-overlap interval "
                             f"[{fm.lower:.6f}, {fm.upper:.6f}] vs direct IPW {direct:.6f}")
    assert conv.n_actions == 4 and err <= 1e-12
    assert fm.lower == fm.upper
    assert fm.lower == pytest.approx(direct, abs=1e-12)


def test_9_cli_determinism(tmp_path):
    (tmp_path / "data.csv").write_text(
        "x1,x2,pb,pe,a,y,mu_hat\n" + "\n".join(
            f"{i / 10},{(i * 7 % 10) / 10},{0.5 if i < 12 else 0},0.8,{int(i < 12 and i % 2 == 0)},"
            f"{(0.3 + i / 40) if i < 12 and i % 2 == 0 else ''},{0.3 + i / 40}"
            for i in range(20)) + "\n")
    ds = {"path": "data.csv", "schema": {"covariates": ["x1", "x2"], "mu_hat": "mu_hat"}}
    configs = {
        "bounds": {"command": "bounds", "dataset": ds, "assumptions": {"bounds": [0, 1], "L": 1.0}},
        "sweep": {"command": "sweep", "dataset": ds,
                  "assumptions": {"bounds": [0, 1], "L_grid": [0.1, 1.0, 2.0, "inf"]},
                  "estimator": {"mode": "conservative"}},
        "multi": {"command": "multi", "datasets": [ds, ds], "assumptions": {"bounds": [0, 1], "L": 2.0}},
        "coverage": {"command": "coverage", "seed": 3,
                     "coverage": {"n_grid": [200], "L_grid": [2.0, "inf"], "replications": 3, "L_true": 2.0}},
        "policy": {"command": "policy-study",
                   "policy_study": {"n": 400, "T_grid": [0.3, 0.5], "L_grid": [1.0]}},
        "rate": {"command": "rate-study", "rate_study": {"n_grid": [100, 200], "replications": 3}},
    }
    identical = []
    for name, cfg in configs.items():
        path = tmp_path / f"{name}.json"
        path.write_text(json.dumps(cfg))
        outs = []
        for rep in ("a", "b"):
            out = tmp_path / f"{name}-{rep}"
            assert main([str(path), "--out", str(out)]) == 0
            outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir()) if p.name != "manifest.json"})
        identical.append(outs[0] == outs[1] and len(outs[0]) >= 2)
    ok = all(identical)
    record_acceptance(9, ok, f"{sum(identical)}/{len(configs)} commands gave byte-identical results across runs")
    assert ok
