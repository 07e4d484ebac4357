import json
from fractions import Fraction

import numpy as np
import pytest

from stopcal.birthdeath import BirthDeathChain
from stopcal.cli import main
from stopcal.diffusion import SpeedMeasure
from stopcal.golden import bm_eigen, chain_example, concave_values, sticky_values
from stopcal.uconvex import GridFunction

from conftest import grid


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    return code, capsys.readouterr().out


def write_values(path, v: GridFunction):
    GridFunction(v.grid, np.exp(v.values), "theta").to_csv(path)
    return path


def test_forward_writes_values(tmp_path, capsys):
    phi = tmp_path / "phi.csv"
    bm_eigen(x_max=6.0, step=1e-2).to_csv(phi)
    out = tmp_path / "v.csv"
    code, text = run(capsys, "forward", "--phi", phi, "--payoff", "linear", "--rho", 0.5,
                     "--theta-grid", "0:0.9:0.1", "--out", out)
    assert code == 0
    summary = json.loads(text)
    assert summary["nodes"] == 10
    assert out.read_text().count("\n") == 11


def test_concave_inverse_reports_inconsistency(tmp_path, capsys):
    values = write_values(tmp_path / "V.csv", concave_values())
    code, text = run(capsys, "inverse", "--values", values, "--payoff", "concave", "--rho", 0.5,
                     "--x-grid", "0:8:0.01")
    assert code == 1
    assert json.loads(text)["reason"] == "e^{v^g} non-convex"


def test_missing_rho_is_invalid(tmp_path, capsys):
    values = write_values(tmp_path / "V.csv", concave_values())
    code, text = run(capsys, "inverse", "--values", values, "--payoff", "concave")
    assert code == 2
    assert "rho" in json.loads(text)["message"]


@pytest.mark.parametrize("grid_text", ["0:8", "1:0:0.1", "0:1:0"])
def test_bad_grid_is_invalid(tmp_path, capsys, grid_text):
    values = write_values(tmp_path / "V.csv", concave_values())
    code, _ = run(capsys, "inverse", "--values", values, "--payoff", "concave", "--rho", 0.5, "--x-grid", grid_text)
    assert code == 2


def test_missing_file_is_invalid(tmp_path, capsys):
    code, _ = run(capsys, "inverse", "--values", tmp_path / "absent.csv", "--payoff", "linear", "--rho", 0.5)
    assert code == 2


def test_flags_override_config(tmp_path, capsys):
    values = write_values(tmp_path / "V.csv", sticky_values())
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"rho": -1.0, "payoff": "linear", "grids": {"x": [0, 2.2, 0.01]}}))
    code, _ = run(capsys, "inverse", "--config", cfg, "--values", values)
    assert code == 2
    code, text = run(capsys, "inverse", "--config", cfg, "--values", values, "--rho", 0.5)
    assert code == 0
    assert json.loads(text)["verdict"] == "consistent"


def test_inverse_report_is_byte_identical(tmp_path, capsys):
    values = write_values(tmp_path / "V.csv", sticky_values())
    outs = []
    for k in range(2):
        out = tmp_path / f"rep{k}.json"
        code, _ = run(capsys, "inverse", "--values", values, "--payoff", "linear", "--rho", 0.5,
                      "--x-grid", "0:2.2:0.01", "--out", out, "--curves", tmp_path / f"c{k}.csv")
        assert code == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
    assert (tmp_path / "c0.csv").read_bytes() == (tmp_path / "c1.csv").read_bytes()
    curves = (tmp_path / "c0.csv").read_text().splitlines()
    assert curves[0] == "curve,coord,value"
    assert {line.split(",")[0] for line in curves[1:]} == {"v", "v_g", "phi", "x_star"}


def test_birthdeath_exact_round_trip(tmp_path, capsys):
    values = tmp_path / "V.csv"
    chain_example(exact=True).to_csv(values)
    out = tmp_path / "chain.json"
    code, text = run(capsys, "birthdeath", "--values", values, "--exact", "--rho", 0.5, "--out", out)
    assert code == 0
    chain = BirthDeathChain.from_json(out)
    assert chain.states == tuple(float(k) for k in range(10))
    assert chain.phi[3] == 15.0
    assert json.loads(text)["lambda"][1] == float(2 * (1 - Fraction(1, 4)))


def test_birthdeath_rejects_concave_values(tmp_path, capsys):
    values = tmp_path / "V.csv"
    values.write_text("theta,V\n-1,1\n0,0.9\n1,0.1\n")
    code, text = run(capsys, "birthdeath", "--values", values, "--rho", 0.5)
    assert code == 2
    assert json.loads(text)["error"] == "NonConvexInput"


def test_verify_is_reproducible(tmp_path, capsys):
    g = grid(0.0, 2.0, 0.1)
    m = tmp_path / "m.json"
    SpeedMeasure(GridFunction(g, np.ones_like(g), "x")).to_json(m)
    args = ("verify", "--measure", m, "--x", 1.0, "--rho", 0.5, "--paths", 500, "--dt", 1e-3, "--seed", 4)
    code1, a = run(capsys, *args)
    code2, b = run(capsys, *args)
    assert code1 == code2 == 0 and a == b
    assert json.loads(a)["paths_used"] == 500


def test_stockvol_power_example(tmp_path, capsys):
    x = grid(1.0, 3.0, 0.01)
    phi = tmp_path / "phi.csv"
    GridFunction(x, x**-2.0, "x").to_csv(phi)
    out = tmp_path / "eta.csv"
    code, _ = run(capsys, "stockvol", "--phi", phi, "--rho", 0.5, "--delta", 0.0, "--out", out)
    assert code == 0
    rows = [r.split(",") for r in out.read_text().splitlines()[1:]]
    eta = np.array([float(r[1]) for r in rows if r[1]])
    assert np.allclose(eta, eta[len(eta) // 2], rtol=1e-3)
