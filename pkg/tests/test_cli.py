import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from trichotomy.cli import ExperimentConfig, main
from trichotomy.errors import ValidationError
from trichotomy.linops import read_matrix, write_matrix

BASE = {
    "dims": [2, 2, 2],
    "moduli": [[0.2, 0.4], [0.9, 1.1], [2.5, 4.0]],
    "cond": 5.0,
    "rho0": 0.15,
    "rho": 0.9,
    "rho0_hat": 0.4,
    "rho_hat": 0.65,
    "horizon": 40,
    "seed": 3,
}


def run(tmp_path, cfg, *extra, name="out"):
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / name
    return main(["--config", str(path), "--out", str(out), "--quiet", *extra]), out


def load(path):
    d = json.loads(path.read_text())
    d.pop("timestamp")
    return d


def test_gen_writes_instance(tmp_path):
    code, out = run(tmp_path, {**BASE, "mode": "gen", "delta": 0.5})
    assert code == 0
    for f in ("matrix_a.txt", "matrix_b.txt", "certificate.json", "gen_report.json"):
        assert (out / f).exists()
    assert read_matrix(out / "matrix_a.txt").shape == (6, 6)


def test_gen_diagonal_case(tmp_path):
    cfg = {
        "mode": "gen",
        "dims": [1, 1, 1],
        "moduli": [0.5, 1.0, 2.0],
        "rho0": 0.05,
        "rho": 0.6,
        "rho0_hat": 0.2,
        "rho_hat": 0.5,
        "seed": 123,
    }
    code, out = run(tmp_path, cfg)
    assert code == 0
    np.testing.assert_array_equal(read_matrix(out / "matrix_a.txt"), np.diag([0.5, 1.0, 2.0]))
    assert json.loads((out / "certificate.json").read_text())["kappa"] == pytest.approx(1.0)


def test_solve_outputs(tmp_path):
    code, out = run(tmp_path, {**BASE, "mode": "solve", "delta": 0.5})
    assert code == 0
    rep = load(out / "solve_report.json")
    assert rep["solve"]["converged"]
    with open(out / "family_norms.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2 * 40 + 1
    assert rows[0]["stable"] == "" and rows[40]["n"] == "0"


def test_verify_passes(tmp_path):
    code, out = run(tmp_path, {**BASE, "mode": "verify", "delta": 0.5})
    assert code == 0
    assert load(out / "verify_report.json")["verify"]["pass"] is True


def test_verify_from_files(tmp_path):
    code, out = run(tmp_path, {**BASE, "mode": "gen", "delta": 0.3}, name="gen")
    assert code == 0
    cfg = {k: v for k, v in BASE.items() if k not in ("dims", "moduli", "cond", "seed")}
    cfg.update(mode="verify", certificate="gen/certificate.json", matrix_b="gen/matrix_b.txt")
    code, out = run(tmp_path, cfg, name="ver")
    assert code == 0


def test_violation_exit_code(tmp_path):
    code, out = run(tmp_path, {**BASE, "mode": "verify", "delta": 0.5, "tol": 1e-30})
    assert code == 3
    assert load(out / "verify_report.json")["verify"]["pass"] is False


def test_sweep(tmp_path):
    grid = [0.0, 0.25, 0.5, 0.75]
    code, out = run(tmp_path, {**BASE, "mode": "sweep", "delta_grid": grid})
    assert code == 0
    with open(out / "sweep.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["delta", "bound", "max_projector_distance", "envelope_slack", "pass"]
    assert rows[1] == ["0", "0", "0", "1", "True"]
    bounds = [float(r[1]) for r in rows[1:]]
    assert all(a < b for a, b in zip(bounds, bounds[1:]))
    assert all(r[4] == "True" for r in rows[1:])
    assert sorted(p.name for p in (out / "sweep").iterdir()) == [f"point_{i:04d}.json" for i in range(4)]


def test_howland(tmp_path):
    cfg = {**BASE, "mode": "howland", "dims": [1, 1, 1], "period": 3, "alpha": 0.6, "cond": 2.0, "delta": 0.5}
    code, out = run(tmp_path, cfg)
    assert code == 0
    rep = load(out / "howland_report.json")
    assert rep["verify"]["pass"] and rep["period"] == 3
    back = json.loads((out / "periodic_system.json").read_text())
    assert back["period"] == 3 and len(back["perturbation"]) == 3


def test_deterministic_apart_from_timestamp(tmp_path):
    cfg = {**BASE, "mode": "verify", "delta": 0.5}
    _, a = run(tmp_path, cfg, name="a")
    _, b = run(tmp_path, cfg, name="b")
    assert load(a / "verify_report.json") == load(b / "verify_report.json")


def test_seed_override(tmp_path):
    cfg = {**BASE, "mode": "gen"}
    _, a = run(tmp_path, cfg, "--seed", "7", name="a")
    cfg7 = {**cfg, "seed": 7}
    _, b = run(tmp_path, cfg7, name="b")
    _, c = run(tmp_path, cfg, name="c")
    np.testing.assert_array_equal(read_matrix(a / "matrix_a.txt"), read_matrix(b / "matrix_a.txt"))
    assert not np.array_equal(read_matrix(a / "matrix_a.txt"), read_matrix(c / "matrix_a.txt"))


@pytest.mark.parametrize(
    "patch",
    [
        {"mode": "fly"},
        {"mode": "gen", "rho0_hat": 0.95},
        {"mode": "gen", "bogus": 1},
        {"mode": "gen", "dims": [2, 2]},
        {"mode": "sweep"},
        {"mode": "gen", "horizon": 0},
        {"mode": "solve"},
    ],
)
def test_invalid_config_exit_one(tmp_path, patch, capsys):
    code, out = run(tmp_path, {**BASE, **patch})
    assert code == 1
    err = json.loads(capsys.readouterr().err)
    assert err["exit_code"] == 1
    assert (out / "error.json").exists()


def test_over_budget_is_invalid_input(tmp_path, capsys):
    code, _ = run(tmp_path, {**BASE, "mode": "solve", "delta": 1.5})
    assert code == 1
    assert json.loads(capsys.readouterr().err)["error"] == "BudgetError"


def test_infeasible_rates_exit_two(tmp_path, capsys):
    code, _ = run(tmp_path, {**BASE, "mode": "gen", "rho": 1.5, "rho_hat": 1.2})
    assert code == 2
    assert json.loads(capsys.readouterr().err)["exit_code"] == 2


def test_missing_config_file(tmp_path):
    assert main(["--config", str(tmp_path / "nope.json"), "--out", str(tmp_path / "o")]) == 1


def test_quiet_suppresses_output(tmp_path, capsys):
    run(tmp_path, {**BASE, "mode": "gen"})
    assert capsys.readouterr().out == ""
    path = tmp_path / "loud.json"
    path.write_text(json.dumps({**BASE, "mode": "gen"}))
    assert main(["--config", str(path), "--out", str(tmp_path / "loud")]) == 0
    assert "gen: pass" in capsys.readouterr().out


def test_config_from_dict_defaults():
    cfg = ExperimentConfig.from_dict({**BASE, "mode": "gen"})
    assert cfg["fp_tol"] == 1e-12 and cfg["delta_relative"] is True
    with pytest.raises(ValidationError):
        ExperimentConfig.from_dict([1, 2])


def test_module_entry_point(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({**BASE, "mode": "gen"}))
    r = subprocess.run(
        [sys.executable, "-m", "trichotomy", "--config", str(path), "--out", str(tmp_path / "o")],
        capture_output=True,
        text=True,
    )
    assert r.returncode == 0, r.stderr
    assert "gen: pass" in r.stdout


def test_matrix_file_requires_alpha(tmp_path):
    write_matrix(tmp_path / "a.txt", np.diag([0.5, 1.0, 2.0]))
    cfg = {"mode": "gen", "matrix_a": "a.txt", "rho0": 0.05, "rho": 0.6, "rho0_hat": 0.2, "rho_hat": 0.5}
    code, _ = run(tmp_path, cfg)
    assert code == 1
    code, out = run(tmp_path, {**cfg, "alpha": 0.6}, name="ok")
    assert code == 0
