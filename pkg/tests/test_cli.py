import csv
import json
import shutil
from pathlib import Path

import pytest

from pidope.cli import main

EXAMPLES = Path(__file__).resolve().parents[1] / "docs" / "examples"


@pytest.fixture
def workdir(tmp_path):
    for name in ("worked_example.csv", "bounds.yaml", "sweep.yaml"):
        shutil.copy(EXAMPLES / name, tmp_path / name)
    return tmp_path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_bounds_example(workdir, capsys):
    assert main([str(workdir / "bounds.yaml")]) == 0
    out = workdir / "out" / "bounds"
    res = json.loads((out / "results.json").read_text())
    psi2 = res["result"]["psi2"]
    assert psi2["lower"] == pytest.approx(0.2 / 3) and psi2["upper"] == pytest.approx(0.9 / 3)
    assert res["result"]["feasibility"]["feasible"] is False
    assert "need L >= 0.5" in capsys.readouterr().err
    assert (out / "manifest.json").exists() and (out / "bounds.csv").exists()


def test_infeasible_exit_code(workdir, capsys):
    cfg = workdir / "bounds.yaml"
    cfg.write_text(cfg.read_text().replace("enforce_feasibility: false", "enforce_feasibility: true"))
    assert main([str(cfg)]) == 2
    assert "L >= 0.5" in capsys.readouterr().err
    assert not (workdir / "out" / "bounds" / "results.json").exists()


def test_L_override(workdir, tmp_path):
    cfg = workdir / "bounds.yaml"
    cfg.write_text(cfg.read_text().replace("enforce_feasibility: false", "enforce_feasibility: true"))
    assert main([str(cfg), "--L", "0.5", "--out", str(tmp_path / "o")]) == 0
    res = json.loads((tmp_path / "o" / "results.json").read_text())
    assert res["result"]["psi2"]["lower"] == pytest.approx(0.0)
    assert main([str(cfg), "--L", "inf", "--out", str(tmp_path / "m")]) == 0
    res = json.loads((tmp_path / "m" / "results.json").read_text())
    assert res["result"]["method_used"] == "manski"


def test_sweep_marks_infeasible_cells(workdir, capsys):
    assert main([str(workdir / "sweep.yaml")]) == 0
    rows = read_csv(workdir / "out" / "sweep" / "sweep.csv")
    assert [r["L"] for r in rows] == ["0.1", "0.4", "1.0", "2.0", "inf"]
    assert [r["feasible"] for r in rows] == ["false", "false", "true", "true", "true"]
    assert "infeasible" in capsys.readouterr().err


def test_malformed_config(workdir, capsys):
    cfg = workdir / "bad.yaml"
    cfg.write_text((workdir / "bounds.yaml").read_text() + "bogus: 1\n")
    assert main([str(cfg)]) == 1
    assert "bogus" in capsys.readouterr().err
    cfg.write_text("command: sweep\n")
    assert main([str(cfg)]) == 1
    cfg.write_text("[1, 2\n")
    assert main([str(cfg)]) == 1


def test_missing_dataset(workdir):
    cfg = workdir / "bounds.yaml"
    cfg.write_text(cfg.read_text().replace("worked_example.csv", "missing.csv"))
    assert main([str(cfg)]) == 1


def test_multi_command(workdir):
    cfg = workdir / "multi.yaml"
    ds = {"path": "worked_example.csv", "schema": {"covariates": ["x1"], "mu_hat": "mu_hat"}}
    cfg.write_text(json.dumps({
        "command": "multi", "datasets": [ds, ds],
        "per_action_assumptions": [{"bounds": [0, 1], "L": 0.5}, {"bounds": [0, 1], "L": 1.0}],
    }))
    cfg = cfg.rename(workdir / "multi.json")
    assert main([str(cfg)]) == 0
    rows = read_csv(workdir / "out" / "multi.csv")
    total = rows[-1]
    assert total["label"] == "total"
    assert float(total["lower"]) == pytest.approx(float(rows[0]["lower"]) + float(rows[1]["lower"]))


def test_repeat_runs_identical(workdir, tmp_path):
    for d in ("a", "b"):
        assert main([str(workdir / "sweep.yaml"), "--out", str(tmp_path / d)]) == 0
    for name in ("results.json", "sweep.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
