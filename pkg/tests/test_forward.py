import dataclasses

import numpy as np
import pytest

from stopcal.diffusion import Eigenfunction, SpeedMeasure
from stopcal.forward import lipschitz_report, read_forward_csv, solve_forward, tail_limsup
from stopcal.golden import fullcalc_closed_form
from stopcal.payoffs import builtin
from stopcal.uconvex import DECREASING, INCREASING, GridFunction

from conftest import grid

RHO = 0.5
LINEAR = builtin("linear")


def bm_closed_form(theta):
    return theta * np.arctanh(theta) + 0.5 * np.log(1 - theta**2)


def test_bm_value_at_half(bm_phi):
    sol = solve_forward(bm_phi, LINEAR, RHO, np.array([0.5, 0.6]))
    assert sol.V.values[0] == pytest.approx(1.139754, abs=1e-6)
    assert sol.x_star[0] == pytest.approx(np.arctanh(0.5), abs=1e-3)


def test_speed_measure_input_matches_eigenfunction_input():
    x = grid(0.0, 10.0, 1e-3)
    m = SpeedMeasure(GridFunction(x, np.ones_like(x), "x"))
    theta = grid(0.0, 0.9, 0.05)
    sol = solve_forward(m, LINEAR, RHO, theta)
    assert np.max(np.abs(sol.v - bm_closed_form(theta))) < 1e-6


def test_rational_eigenfunction_value_and_threshold():
    x = grid(0.0, 0.9999, 1e-4)
    phi = Eigenfunction(GridFunction(x, 1 / (1 - x**2), "x"))
    sol = solve_forward(phi, LINEAR, RHO, np.array([1.0, 2.0]))
    assert sol.x_star[0] == pytest.approx(np.sqrt(2) - 1, abs=2e-4)
    assert sol.v[0] == pytest.approx(0.225988, abs=1e-5)
    assert sol.v[1] == pytest.approx(float(fullcalc_closed_form(np.array([2.0]))[0]), abs=1e-5)


def test_separable_family_has_no_attained_threshold():
    fam = builtin("separable", {"h": "square", "f": "tanh", "w": "identity"})
    x = grid(0.0, 10.0, 0.01)
    phi = Eigenfunction(GridFunction(x, np.exp(x**2), "x"))
    theta = grid(0.1, 2.0, 0.1)
    sol = solve_forward(phi, fam, RHO, theta)
    assert not sol.attained.any()
    assert sol.theta_R == theta[0]
    assert np.allclose(sol.v, theta, atol=1e-7)


def test_values_beyond_theta_r_are_infinite(bm_phi):
    theta = grid(0.0, 1.2, 0.05)
    sol = solve_forward(bm_phi, LINEAR, RHO, theta)
    assert np.all(np.isinf(sol.v[theta > 1.0 + 1e-9]))
    assert 1.0 <= sol.theta_R <= 1.05
    assert sol.empty_contiguous


def test_tail_limsup():
    assert tail_limsup(np.array([1.0, 1.0, 1.0])) == 1.0
    assert tail_limsup(np.array([0.0, 1.0, 2.0])) == np.inf
    assert tail_limsup(np.array([0.0, 2.0, 1.0])) == 2.0


def test_dominance_and_monotone_thresholds(bm_phi):
    theta = grid(0.0, 0.95, 0.01)
    sol = solve_forward(bm_phi, LINEAR, RHO, theta)
    x = bm_phi.grid[::50]
    G = np.exp(np.outer(x, theta))
    lhs = np.outer(bm_phi.phi(x), sol.V.values)
    assert np.all(lhs >= G * (1 - 1e-12))
    xs = sol.x_star[sol.attained]
    assert np.all(np.diff(xs) >= 0)


def test_reverse_orientation_empties_a_prefix():
    fam = builtin("separable", {"w": "negate"})
    assert fam.sm_orientation == DECREASING
    x = grid(0.0, 10.0, 1e-3)
    phi = Eigenfunction(GridFunction(x, np.cosh(x), "x"))
    theta = grid(-1.2, 0.0, 0.05)
    sol = solve_forward(phi, fam, RHO, theta)
    assert sol.orientation == DECREASING
    assert -1.05 <= sol.theta_L <= -1.0
    assert sol.empty_contiguous
    inside = theta >= -0.9
    assert np.max(np.abs(sol.v[inside] - bm_closed_form(-theta[inside]))) < 1e-6
    assert np.all(np.diff(sol.x_star[sol.attained]) <= 0)


def test_lipschitz_bound_for_bm(bm_phi):
    theta = grid(0.0, 0.9, 1e-3)
    rep = lipschitz_report(solve_forward(bm_phi, LINEAR, RHO, theta))
    worst = max(i["lipschitz"] for i in rep.intervals)
    assert worst <= np.arctanh(0.9) * (1 + 1e-3)


def test_lipschitz_flags_blow_up_near_theta_r():
    x = grid(0.0, 400.0, 0.01)
    phi = Eigenfunction(GridFunction(x, 1 + x**2, "x"))
    theta = grid(0.1, 1.99, 0.01)
    sol = solve_forward(phi, builtin("power"), RHO, theta)
    exact = theta / 2 * np.log(theta) + (2 - theta) / 2 * np.log(2 - theta) - np.log(2)
    assert np.max(np.abs(sol.v - exact)) < 1e-4
    rep = lipschitz_report(sol)
    assert all(np.isfinite(i["lipschitz"]) for i in rep.intervals)
    assert rep.endpoint_divergent


def test_constant_payoff_has_zero_quotient():
    fam = dataclasses.replace(
        builtin("separable", {"h": "zero", "f": "zero"}, verify=False), sm_orientation=INCREASING
    )
    x = grid(0.0, 5.0, 0.01)
    phi = Eigenfunction(GridFunction(x, np.cosh(x), "x"))
    sol = solve_forward(phi, fam, RHO, grid(0.0, 1.0, 0.1))
    assert np.all(sol.v == 0)
    assert all(i["lipschitz"] == 0 for i in lipschitz_report(sol).intervals)


def test_forward_csv_round_trip(tmp_path, bm_phi):
    theta = grid(0.0, 1.2, 0.1)
    sol = solve_forward(bm_phi, LINEAR, RHO, theta)
    path = tmp_path / "sol.csv"
    sol.to_csv(path)
    back = read_forward_csv(path)
    assert np.array_equal(back["theta"], theta)
    assert np.array_equal(back["V"], sol.V.values)
    assert np.array_equal(back["attained"], sol.attained)
    assert np.array_equal(np.isnan(back["x_star"]), np.isnan(sol.x_star))
