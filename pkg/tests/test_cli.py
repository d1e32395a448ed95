import json

import numpy as np
import pytest
import yaml

from piezohom import cli
from piezohom.config import ConfigError, load_config, schedule_from, validate
from piezohom.export import read_coefficient_csv

SOLID = {
    "mesh": {"layout": "solid", "divisions": [2, 2, 2]},
    "homogenization": {"schedule": [0.01, 0.02]},
}


@pytest.fixture
def solid_config(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(yaml.safe_dump(SOLID))
    return path


def run_cli(*argv):
    return cli.main([str(a) for a in argv])


# -- configuration ------------------------------------------------------------


def test_defaults_validate():
    cfg = validate({})
    assert cfg["mesh"]["divisions"] == [32, 2, 2]
    assert cfg["homogenization"]["amplitude"] == -0.05


@pytest.mark.parametrize(
    "raw,key",
    [
        ({"mesh": {"divisons": [8, 2, 2]}}, "mesh.divisons"),
        ({"solvr": {}}, "solvr"),
        ({"solver": {"tol": -1.0}}, "solver.tol"),
        ({"solver": {"max_iter": "many"}}, "solver.max_iter"),
        ({"mesh": {"divisions": [12, 2, 2]}}, "mesh.divisions"),
        ({"homogenization": {"cases": ["C99bar"]}}, "homogenization.cases"),
        ({"homogenization": {"schedule": {"max": 0.05, "step": 3}}}, "homogenization.schedule.step"),
        ({"homogenization": {"contact": 1}}, "homogenization.contact"),
    ],
)
def test_invalid_config_names_key(raw, key):
    with pytest.raises(ConfigError, match=key.replace(".", r"\.")):
        validate(raw)


def test_yaml_exponent_strings_are_numbers(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("solver:\n  tol: 1e-9\n")
    assert load_config(path, environ={})["solver"]["tol"] == 1e-9


def test_environment_override(tmp_path):
    cfg = load_config(environ={"PIEZOHOM_SOLVER__TOL": "1e-8", "PIEZOHOM_OUTPUT": "elsewhere", "HOME": "/"})
    assert cfg["solver"]["tol"] == 1e-8
    assert cfg["output"] == "elsewhere"
    with pytest.raises(ConfigError):
        load_config(environ={"PIEZOHOM_A__B__C": "1"})


def test_explicit_overrides_beat_environment():
    cfg = load_config(environ={"PIEZOHOM_SOLVER__TOL": "1e-8"}, overrides={"solver": {"tol": 1e-6}})
    assert cfg["solver"]["tol"] == 1e-6


def test_schedule_forms():
    assert schedule_from(validate({"homogenization": {"schedule": [0.01, 0.02]}})) == [0.01, 0.02]
    s = schedule_from(validate({"homogenization": {"schedule": {"max": 0.1, "steps": 2}}}))
    assert len(s) == 4 and s[-1] == pytest.approx(0.1)


# -- subcommands --------------------------------------------------------------


def test_homogeneous_cube_reproduces_constants(tmp_path, solid_config, D_micro, capsys):
    out = tmp_path / "out"
    assert run_cli("homogenize", "--config", solid_config, "--out", out) == 0
    coeffs = {r[1]: r[2] for r in read_coefficient_csv(out / "coefficients.csv")}
    assert coeffs["C11bar"] == pytest.approx(D_micro[0, 0], rel=1e-10)
    assert coeffs["C12bar"] == pytest.approx(D_micro[0, 1], rel=1e-10)
    assert coeffs["eps33bar"] == pytest.approx(D_micro[8, 8], rel=1e-10)
    M = np.loadtxt(out / "effective_matrix.csv", delimiter=",")
    assert M.shape == (9, 9)
    for name in ("mesh.txt", "mesh.vtk", "shell_matrix.csv", "shell_report.txt", "manifest.json"):
        assert (out / name).exists(), name
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "ok" and manifest["command"] == "homogenize"
    assert not (out / "FAILED").exists()
    assert "C11bar" in capsys.readouterr().out


def test_deterministic_outputs(tmp_path, solid_config):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run_cli("homogenize", "--config", solid_config, "--out", a, "--deterministic") == 0
    assert run_cli("homogenize", "--config", solid_config, "--out", b, "--threads", "3") == 0
    assert (a / "coefficients.csv").read_bytes() == (b / "coefficients.csv").read_bytes()
    assert (a / "effective_matrix.csv").read_bytes() == (b / "effective_matrix.csv").read_bytes()


def test_solve_writes_fields(tmp_path, solid_config):
    out = tmp_path / "out"
    assert run_cli("solve", "--config", solid_config, "--out", out, "--case", "C11bar", "--amplitude", "0.01") == 0
    vtk = list(out.glob("fields_C11bar_*.vtk"))
    assert len(vtk) == 1


def test_mesh_and_sweep(tmp_path, solid_config):
    out = tmp_path / "out"
    assert run_cli("mesh", "--config", solid_config, "--out", out) == 0
    assert (out / "mesh.txt").exists()
    assert run_cli("sweep", "--config", solid_config, "--out", out) == 0
    rows = read_coefficient_csv(out / "sweep.csv")
    assert sorted({r[0] for r in rows}) == [0.01, 0.02]
    c11 = [r[2] for r in rows if r[1] == "C11bar"]
    np.testing.assert_allclose(c11, c11[0], rtol=1e-12)


def test_shell_from_matrix_file(tmp_path, D_micro, capsys):
    path = tmp_path / "D.csv"
    np.savetxt(path, D_micro, delimiter=",")
    out = tmp_path / "out"
    assert run_cli("shell", "--matrix", path, "--thickness", "2", "--out", out) == 0
    assert "membrane" in capsys.readouterr().out
    rows = (out / "shell_matrix.csv").read_text().splitlines()
    assert float(rows[1].split(",")[1]) == pytest.approx(2 * D_micro[0, 0])


def test_failure_writes_marker(tmp_path):
    bad = tmp_path / "bad.csv"
    np.savetxt(bad, np.eye(4), delimiter=",")
    out = tmp_path / "out"
    assert run_cli("shell", "--matrix", bad, "--out", out) == 1
    assert "9x9" in (out / "FAILED").read_text()
    assert json.loads((out / "manifest.json").read_text())["status"] == "failed"
    # a later successful run clears the marker
    good = tmp_path / "good.csv"
    np.savetxt(good, np.eye(9), delimiter=",")
    assert run_cli("shell", "--matrix", good, "--out", out) == 0
    assert not (out / "FAILED").exists()


def test_malformed_config_exits_with_key(tmp_path, capsys):
    path = tmp_path / "c.yaml"
    path.write_text("mesh:\n  divisons: [8, 2, 2]\n")
    assert run_cli("mesh", "--config", path, "--out", tmp_path / "o") == 2
    assert "mesh.divisons" in capsys.readouterr().err


def test_environment_reaches_manifest(tmp_path, solid_config, monkeypatch):
    monkeypatch.setenv("PIEZOHOM_SOLVER__MAX_ITER", "7")
    out = tmp_path / "out"
    assert run_cli("mesh", "--config", solid_config, "--out", out) == 0
    assert json.loads((out / "manifest.json").read_text())["config"]["solver"]["max_iter"] == 7


def test_check_subcommand(tmp_path, solid_config, capsys):
    assert run_cli("check", "--config", solid_config, "--out", tmp_path / "o") == 0
    text = capsys.readouterr().out
    assert "PASS" in text and "FAIL " not in text
