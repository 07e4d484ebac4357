import json

import numpy as np
import pytest

from stopcal.diffusion import ABSORBING, Eigenfunction
from stopcal.errors import NotGConvex, ValidationError
from stopcal.forward import solve_forward
from stopcal.golden import (
    bm_values,
    concave_values,
    powers_values,
    ratio_values,
    section_values,
    sticky_values,
)
from stopcal.inverse import (
    CASE_INFINITE,
    CASE_INTERIOR,
    CASE_ZERO,
    CONSISTENT,
    GSECTION,
    INCONSISTENT,
    LEFT,
    REASON_NONCONVEX,
    RIGHT,
    UNIQUE,
    candidate_psi,
    check_existence,
    diagnose_uniqueness,
    recover_measure,
    solve_inverse,
)
from stopcal.payoffs import builtin
from stopcal.uconvex import GridFunction

from conftest import grid

RHO = 0.5


@pytest.fixture(scope="module")
def powers_report():
    return solve_inverse(powers_values(), builtin("power"), RHO, grid(0.0, 30.0, 0.01))


@pytest.fixture(scope="module")
def ratio_report():
    return solve_inverse(ratio_values(), builtin("ratio"), RHO, grid(0.0, 3.0, 1e-3))


@pytest.fixture(scope="module")
def section_report():
    return solve_inverse(section_values(), builtin("linear"), RHO, grid(0.0, 8.0, 0.01))


def staircase_values():
    knots = [n + 2.0**-n - 2 for n in range(11)]
    theta = np.linspace(-1.0, knots[-1], 4000)
    return GridFunction(theta, np.log(np.interp(theta, knots, [2.0**-n for n in range(11)])), "theta")


def test_candidate_psi_for_bm():
    x = grid(0.0, 3.0, 0.01)
    psi = candidate_psi(bm_values(), builtin("linear"), x)
    inner = x <= 0.9 * np.arctanh(0.999)
    assert np.max(np.abs(psi.values[inner] - np.log(np.cosh(x[inner])))) < 1e-3


def test_candidate_psi_for_concave_family():
    x = grid(0.0, 8.0, 0.01)
    psi = candidate_psi(concave_values(), builtin("concave"), x)
    assert np.max(np.abs(psi.values - 0.5 * np.log1p(x))) < 1e-6


def test_candidate_psi_for_tanh_additive():
    th = grid(0.0, 5.0, 0.01)
    x = grid(0.0, 3.0, 0.01)
    psi = candidate_psi(GridFunction(th, th, "theta"), builtin("tanh-additive"), x)
    assert np.max(np.abs(psi.values - x**2)) < 1e-12


def test_concave_family_is_inconsistent():
    rep = check_existence(concave_values(), builtin("concave"), RHO, grid(0.0, 8.0, 0.01))
    assert rep.verdict == INCONSISTENT
    assert rep.reason == REASON_NONCONVEX == "e^{v^g} non-convex"
    assert rep.candidate_phi is None
    with pytest.raises(ValidationError):
        diagnose_uniqueness(rep)
    with pytest.raises(ValidationError):
        recover_measure(rep, RHO)


def test_not_g_convex_input_rejected():
    th = grid(0.0, 1.0, 0.01)
    with pytest.raises(NotGConvex):
        check_existence(GridFunction(th, -(th**2), "theta"), builtin("linear"), RHO, grid(0.0, 5.0, 0.01))


def test_staircase_call_values_give_powers_of_two():
    rep = solve_inverse(staircase_values(), builtin("call"), RHO, grid(0.0, 12.0, 0.01))
    assert rep.verdict == CONSISTENT and rep.case == CASE_ZERO
    phi = rep.candidate_phi
    assert np.allclose([float(phi.phi(float(n))) for n in range(10)], [2.0 ** (n + 1) - 1 for n in range(10)])
    # the last state closes the state space
    assert phi.xi == 9.0


def test_sticky_values_recover_atom():
    rep = solve_inverse(sticky_values(), builtin("linear"), RHO, grid(0.0, 2.2, 0.01))
    assert rep.consistent and rep.uniqueness == UNIQUE
    x = rep.candidate_phi.grid
    phi = rep.candidate_phi.phi.values
    sel = x <= 1.5
    expect = np.where(x[sel] <= 1, np.exp(x[sel] ** 2), np.exp(x[sel] ** 3))
    assert np.max(np.abs(phi[sel] / expect - 1)) < 1e-2
    m = recover_measure(rep, RHO).candidate
    assert len(m.atoms) == 1 and m.atoms[0].x == pytest.approx(1.0, abs=0.01)
    assert m.atoms[0].mass == pytest.approx(1.0, rel=0.05)


def test_bm_values_recover_unit_density():
    rep = solve_inverse(bm_values(), builtin("linear"), RHO, grid(0.0, 6.0, 0.02))
    assert rep.consistent and rep.uniqueness == UNIQUE and rep.case == CASE_ZERO
    m = recover_measure(rep, RHO)
    assert not m.witnesses
    d = m.candidate.density
    sel = (d.grid >= 0.1) & (d.grid <= 2.0)
    assert np.max(np.abs(d.values[sel] - 1)) < 1e-2


def test_absorbing_boundary_at_one():
    th = grid(0.0, 20.0, 0.01)
    v = GridFunction(th, np.log(np.cosh(th)), "theta")
    rep = solve_inverse(v, builtin("linear"), RHO, grid(0.0, 2.0, 0.001))
    assert rep.consistent and rep.uniqueness == UNIQUE
    assert rep.x_plus == pytest.approx(1.0)
    assert not rep.checks["right_slope_settled"]
    m = recover_measure(rep, RHO).candidate
    assert m.xi == pytest.approx(1.0) and m.xi_kind == ABSORBING
    x = rep.candidate_phi.grid
    inner = x < 0.99
    xs = x[inner]
    exact = np.exp(xs * np.arctanh(xs)) * np.sqrt(1 - xs**2)
    assert np.max(np.abs(rep.candidate_phi.phi.values[inner] / exact - 1)) < 1e-3


def test_powers_left_family(powers_report):
    rep = powers_report
    assert rep.case == CASE_INTERIOR and rep.x_minus == pytest.approx(1.0, abs=0.02)
    assert rep.uniqueness == LEFT and len(rep.witnesses) >= 1
    x = rep.candidate_phi.grid
    left = x <= 1.0
    # candidate on [0, x_-] is the chord from (0, 1) to (1, 2)
    assert np.max(np.abs(rep.candidate_phi.phi.values[left] - (1 + x[left]))) < 2e-2
    w = rep.witnesses[0].phi.values
    assert np.max(np.abs(w[left] - (1 + x[left] ** 2))) < 2e-2


def test_ratio_right_family(ratio_report):
    rep = ratio_report
    assert rep.uniqueness == RIGHT
    assert rep.x_plus == pytest.approx(1.19968, abs=1e-3)
    assert rep.checks["right_extension_condition"]
    assert sum(k == RIGHT for k in rep.witness_kinds) == 2


def test_section_family_matches_chord_branch(section_report):
    rep = section_report
    assert rep.uniqueness == GSECTION
    x = rep.vg.grid
    sel = (x >= 2) & (x <= 3)
    target = np.log((np.e**2 - np.e) * x[sel] + 3 * np.e - 2 * np.e**2)
    w = [w for k, w in zip(rep.witness_kinds, rep.witnesses) if k == GSECTION][0]
    assert np.max(np.abs(np.log(w.phi.values[sel]) - target)) < 1e-6


def test_infinite_lower_threshold_with_superlinear_growth():
    th = grid(0.0, 5.0, 0.01)
    rep = solve_inverse(GridFunction(th, th, "theta"), builtin("tanh-additive"), RHO, grid(0.0, 3.0, 0.01))
    assert rep.case == CASE_INFINITE and rep.consistent
    assert rep.notes["construction"] == "convex_hull_construction"
    assert rep.notes["kappa"] == np.inf
    assert rep.uniqueness == LEFT


@pytest.mark.parametrize("name", ["powers", "ratio", "section"])
def test_every_witness_is_consistent(name, powers_report, ratio_report, section_report):
    rep, p, tol = {
        "powers": (powers_report, builtin("power"), 1e-3),
        "ratio": (ratio_report, builtin("ratio"), 5 * ratio_report.checks["g_convex_tol"]),
        "section": (section_report, builtin("linear"), 5 * section_report.checks["g_convex_tol"]),
    }[name]
    for phi in (rep.candidate_phi,) + rep.witnesses:
        vals = phi.phi.values
        fin = np.isfinite(vals)
        assert vals[0] == 1.0
        assert np.all(np.diff(vals[fin]) >= -1e-9 * np.max(vals[fin]))
        assert np.all(np.diff(vals[fin], 2) >= -1e-9 * np.max(vals[fin]))
        sol = solve_forward(phi, p, RHO, rep.theta)
        ok = sol.attained & np.isfinite(sol.v) & np.isfinite(rep.v.values) & ~rep.boundary
        assert np.max(np.abs(sol.v[ok] - rep.v.values[ok])) <= tol


def test_witnesses_are_distinct(powers_report, ratio_report, section_report):
    for rep in (powers_report, ratio_report, section_report):
        a = rep.candidate_phi.phi.values
        for w in rep.witnesses:
            b = w.phi.values
            both = np.isfinite(a) & np.isfinite(b)
            rel = np.abs(a[both] - b[both]) / np.maximum(1.0, np.abs(a[both]))
            assert not np.array_equal(np.isfinite(a), np.isfinite(b)) or rel.max() > 1e-5


def test_candidate_log_equals_dual_where_attained():
    rep = solve_inverse(bm_values(), builtin("linear"), RHO, grid(0.0, 6.0, 0.02))
    sol = solve_forward(rep.candidate_phi, builtin("linear"), RHO, rep.theta)
    x = rep.candidate_phi.grid
    hit = np.unique(np.searchsorted(x, sol.x_star[sol.attained]))
    psi = np.log(rep.candidate_phi.phi.values[hit])
    assert np.max(np.abs(psi - rep.vg.values[hit])) <= rep.checks["g_convex_tol"]


def test_report_json(tmp_path, ratio_report):
    path = tmp_path / "report.json"
    text = ratio_report.to_json(path)
    d = json.loads(path.read_text())
    assert json.loads(text) == d
    for key in ("verdict", "reason", "x_minus", "x_plus", "x_R", "uniqueness", "phi_csv", "measure_json", "witnesses"):
        assert key in d
    assert d["uniqueness"] == RIGHT and len(d["witnesses"]) == 2
    phi = Eigenfunction.from_csv(d["witnesses"][0]["phi_csv"])
    assert phi.phi.values[0] == 1.0
