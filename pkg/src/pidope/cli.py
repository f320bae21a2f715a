"""Command-line front end.

Usage: ``pidope CONFIG [--L L] [--seed SEED] [--out DIR]``.
Exit status is 0 on success, 1 on input errors and 2 when the fitted values
contradict the asserted assumptions. Diagnostics go to standard error;
results go to files only.
"""
from __future__ import annotations

import argparse
import csv
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from .closed_form import EmptyOverlapError, InfeasibleError
from .config import (
    ConfigError,
    CoverageConfig,
    PolicyStudyConfig,
    RateStudyConfig,
    RunConfig,
    _L,
    load_config,
    parse_config,
)
from .data import DatasetError, load_dataset
from .engine import Options, evaluate, evaluate_multi_action, sweep_L
from .harness.fitters import fit_mu
from .harness.multiclass import ResampleSource, fit_policy, make_yeast_like, two_class_source
from .harness.output import SCHEMA_VERSION, write_csv, write_json, write_manifest
from .harness.studies import ArticleClickModel, rate_study, simulate_coverage, threshold_policy_study
from .harness.synthetic import MeanFunction, PolicySpec, SyntheticSpec
from .nn import StaleIndexError

EXIT_OK, EXIT_INPUT, EXIT_INFEASIBLE = 0, 1, 2


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _options(cfg: RunConfig) -> Options:
    e = cfg.estimator
    return Options(estimator=e.kind, conservative=e.mode == "conservative", clamp_mu=e.clamp_mu,
                   enforce_feasibility=e.enforce_feasibility)


def _load(ds, base: Path):
    data, mu = load_dataset(base / ds.path, ds.schema_.to_schema())
    if mu is None and ds.fitter is not None:
        mu, _ = fit_mu(data, ds.fitter)
    return data, mu


def _interval_row(label, result) -> dict:
    lo, hi = result.interval
    return {"label": label, "lower": lo, "upper": hi, "psi_id": result.psi_id.value,
            "psi2_lower": result.psi2.lower, "psi2_upper": result.psi2.upper,
            "method": result.method_used, "feasible": result.feasibility.feasible}


def _run_bounds(cfg: RunConfig, base: Path, out: Path) -> dict:
    data, mu = _load(cfg.dataset, base)
    result = evaluate(data, mu, cfg.assumptions.build(base), _options(cfg))
    if not result.feasibility.feasible:
        _log(f"warning: fitted values violate the assumptions (need L >= {result.feasibility.max_ratio:.6g}); "
             "interval reported because feasibility is not enforced")
    write_csv(out / "bounds.csv", [_interval_row("interval", result)])
    return {"result": result.to_dict()}


def _run_sweep(cfg: RunConfig, base: Path, out: Path) -> dict:
    data, mu = _load(cfg.dataset, base)
    grid = cfg.assumptions.grid()
    if mu is None:
        raise ValueError("sweep needs fitted values: add a mu_hat column or a fitter")
    sweep = sweep_L(data, mu, cfg.assumptions.build(base, grid[0]), grid, _options(cfg))
    rows = sweep.rows()
    for r in rows:
        if not r["feasible"]:
            _log(f"L={r['L']}: infeasible (fitted values need L >= {r['max_ratio']})")
    write_csv(out / "sweep.csv", rows,
              ["L", "feasible", "lower", "upper", "width", "psi_id", "psi2_lower", "psi2_upper",
               "method", "max_ratio"])
    return {"sweep": sweep.to_dict()}


def _run_multi(cfg: RunConfig, base: Path, out: Path) -> dict:
    loaded = [_load(ds, base) for ds in cfg.datasets]
    datasets = [d for d, _ in loaded]
    mus = [m for _, m in loaded]
    if cfg.per_action_assumptions is not None:
        assumptions = [a.build(base) for a in cfg.per_action_assumptions]
    else:
        assumptions = cfg.assumptions.build(base)
    result = evaluate_multi_action(datasets, mus, assumptions, _options(cfg))
    rows = [_interval_row(f"action {a}", r) for a, r in enumerate(result.per_action)]
    lo, hi = result.interval
    rows.append({"label": "total", "lower": lo, "upper": hi, "psi_id": result.psi_id,
                 "feasible": result.feasible})
    write_csv(out / "multi.csv", rows)
    return {"result": result.to_dict()}


def _coverage_source(c, base: Path, seed: int):
    if c.source == "two-class":
        return two_class_source(c.L_true, c.p)
    if c.source == "yeast-like":
        X, y = make_yeast_like(seed=seed)
    else:
        with (base / c.path).open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        try:
            X = np.array([[float(r[f]) for f in c.features] for r in rows])
            y = np.array([int(r[c.label]) for r in rows])
        except (KeyError, ValueError) as exc:
            raise DatasetError(f"{c.path}: cannot read labelled table: {exc}") from None
    return ResampleSource(X, y, fit_policy(X, y))


def _run_coverage(cfg: RunConfig, base: Path, out: Path) -> dict:
    c = cfg.coverage or CoverageConfig()
    source = _coverage_source(c, base, cfg.seed)
    report = simulate_coverage(source, c.n_grid, [_L(v) for v in c.L_grid], c.replications, c.eps,
                               seed=cfg.seed, bounds=c.bounds, fitter=c.fitter,
                               estimator=cfg.estimator.kind, threshold=c.threshold)
    write_csv(out / "coverage.csv", report.rows())
    return {"coverage": report.to_dict()}


def _run_policy_study(cfg: RunConfig, base: Path, out: Path) -> dict:
    c = cfg.policy_study or PolicyStudyConfig()
    model = ArticleClickModel(n_articles=c.n_articles, base=c.base, user_effect=c.user_effect,
                              article_effect=c.article_effect, interaction=c.interaction, seed=c.model_seed)
    res = threshold_policy_study(model, c.T_grid, [_L(v) for v in c.L_grid], c.n, seed=cfg.seed,
                                 behavior_T=c.behavior_T, fitter=c.fitter, estimator=cfg.estimator.kind)
    write_csv(out / "policy_study.csv", res.rows())
    return {"policy_study": res.to_dict()}


def _run_rate_study(cfg: RunConfig, base: Path, out: Path) -> dict:
    c = cfg.rate_study or RateStudyConfig()
    m = c.mu
    spec = SyntheticSpec(
        p=c.p,
        mu=MeanFunction(m.kind, tuple(m.coeffs), m.intercept, m.amp, m.freq, m.axis, tuple(m.knots), tuple(m.values)),
        noise_sd=c.noise_sd,
        outcome=c.outcome,
        eval_policy=PolicySpec(**c.eval_policy.model_dump()),
        behavior_policy=PolicySpec(**c.behavior_policy.model_dump()),
        carve_axis=c.carve_axis,
        carve_threshold=c.carve_threshold,
    )
    res = rate_study(spec, c.n_grid, c.replications, L=c.L, seed=cfg.seed, fitter=c.fitter, bounds=c.bounds)
    write_csv(out / "rate_study.csv", res.rows())
    return {"rate_study": res.to_dict(), "spec": spec.describe()}


RUNNERS = {
    "bounds": _run_bounds,
    "sweep": _run_sweep,
    "multi": _run_multi,
    "coverage": _run_coverage,
    "policy-study": _run_policy_study,
    "rate-study": _run_rate_study,
}


def run(cfg: RunConfig, base: Path = Path("."), raw: Optional[dict] = None) -> int:
    """Execute one validated config; returns the process exit status."""
    out = Path(cfg.out)
    if not out.is_absolute():
        out = base / out
    started = datetime.now(timezone.utc).isoformat(timespec="seconds")
    t0 = time.perf_counter()
    try:
        payload = RUNNERS[cfg.command](cfg, base, out)
    except InfeasibleError as exc:
        _log(f"infeasible: {exc}")
        if exc.report is not None and exc.report.max_ratio > 0:
            _log(f"hint: the fitted values need L >= {exc.report.max_ratio:.6g}")
        return EXIT_INFEASIBLE
    except (DatasetError, EmptyOverlapError, StaleIndexError, ValueError, OSError) as exc:
        _log(f"error: {exc}")
        return EXIT_INPUT
    payload.update(schema_version=SCHEMA_VERSION, command=cfg.command, seed=cfg.seed)
    write_json(out / "results.json", payload)
    files = sorted(p.name for p in out.iterdir() if p.name != "manifest.json")
    write_manifest(out / "manifest.json", raw if raw is not None else cfg.model_dump(mode="json"),
                   cfg.seed, time.perf_counter() - t0, started, files)
    _log(f"wrote {', '.join(files)} to {out}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="pidope", description=__doc__.splitlines()[0])
    parser.add_argument("config", help="YAML or JSON run configuration")
    parser.add_argument("--L", dest="L", help="override the Lipschitz constant (number or 'inf')")
    parser.add_argument("--seed", type=int, help="override the random seed")
    parser.add_argument("--out", help="override the output directory")
    args = parser.parse_args(argv)
    path = Path(args.config)
    try:
        cfg, raw = load_config(path)
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.out is not None:
            overrides["out"] = args.out
        if args.L is not None:
            if cfg.assumptions is None:
                raise ConfigError("--L needs an 'assumptions' block in the config")
            overrides["assumptions"] = {**cfg.assumptions.model_dump(mode="json", exclude_none=True),
                                        "L": "inf" if args.L == "inf" else float(args.L)}
        if overrides:
            raw = {**raw, **overrides}
            cfg = parse_config(raw)
    except (ConfigError, OSError, ValueError) as exc:
        _log(f"error: {exc}")
        return EXIT_INPUT
    # relative paths in the config resolve against the config file's directory;
    # an --out override resolves against the working directory
    base = path.resolve().parent
    if args.out is not None:
        cfg = cfg.model_copy(update={"out": str(Path(args.out).resolve())})
    return run(cfg, base, raw)


if __name__ == "__main__":
    sys.exit(main())
