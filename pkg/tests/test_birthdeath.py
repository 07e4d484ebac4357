from fractions import Fraction

import numpy as np
import pytest

from stopcal.birthdeath import BirthDeathChain, PiecewiseLinearValue, bd_residual, calibrate_bd, with_rate
from stopcal.diffusion import eigen_from_string
from stopcal.errors import CollidingStates, NonConvexInput, ValidationError
from stopcal.forward import solve_forward
from stopcal.golden import chain_example
from stopcal.payoffs import builtin

RHO = 0.5


def test_integer_chain_exact():
    c = calibrate_bd(chain_example(exact=True), Fraction(1, 2))
    assert c.states == tuple(range(10))
    assert c.phi == tuple(2 ** (n + 1) - 1 for n in range(10))
    assert c.p[0] == 1 and all(p == Fraction(1, 2) for p in c.p[1:])
    rho = Fraction(1, 2)
    assert all(c.lam[n] == 4 * rho * (1 - Fraction(1, 2 ** (n + 1))) for n in range(1, 9))
    # state 0 has only an upward neighbour
    assert c.lam[0] == rho / 2
    assert bd_residual(c, rho=rho) == 0.0
    assert c.truncated


def test_integer_chain_float():
    c = calibrate_bd(chain_example(), RHO)
    assert np.allclose(c.states, np.arange(10), atol=1e-9, rtol=0)
    lam = np.array(c.lam[1:], dtype=float)
    n = np.arange(1, len(c.lam))
    assert np.max(np.abs(lam / (4 * RHO * (1 - 2.0 ** -(n + 1))) - 1)) < 1e-9
    assert bd_residual(c, rho=RHO) < 1e-10


def test_two_piece_value():
    V = PiecewiseLinearValue((-1.0, -0.5, 0.5), (1.0, 0.5, 0.25))
    c = calibrate_bd(V, RHO)
    assert c.states == (0.0, 1.5)
    assert c.phi == (1.0, 4.0)
    assert c.lam == pytest.approx((RHO / 3,))
    # one exponential holding time then a sure jump up
    assert c.lam[0] / (c.lam[0] + RHO) == pytest.approx(1 / c.phi[1])


def test_non_convex_and_invalid_inputs():
    with pytest.raises(NonConvexInput):
        calibrate_bd(PiecewiseLinearValue((-1.0, 0.0, 1.0, 2.0), (1.0, 0.0 + 0.5, 0.4, 0.1)), RHO)
    with pytest.raises(NonConvexInput):
        calibrate_bd(PiecewiseLinearValue((-1.0, 0.0, 1.0), (1.0, 2.0, 3.0)), RHO)
    with pytest.raises(ValidationError):
        calibrate_bd(PiecewiseLinearValue((0.5, 1.0, 2.0), (1.0, 0.5, 0.25)), RHO)
    with pytest.raises(ValidationError):
        calibrate_bd(PiecewiseLinearValue((-1.0, 0.0, 1.0), (1.0, 0.5, 0.25)), RHO)
    with pytest.raises(ValidationError):
        PiecewiseLinearValue((-1.0, 0.0), (1.0, 0.5))


def test_collinear_breakpoints_collide():
    V = PiecewiseLinearValue((-1.0, -0.5, 0.5, 1.0), (1.0, 0.5, 0.25, 0.125))
    with pytest.raises(CollidingStates):
        calibrate_bd(V, RHO)


def test_perturbed_rate_breaks_residual():
    c = calibrate_bd(chain_example(), RHO)
    assert bd_residual(with_rate(c, 1, 1.01), rho=RHO) > 1e-3


def test_string_solver_agrees_at_states():
    c = calibrate_bd(chain_example(), RHO)
    phi = eigen_from_string(c.to_speed_measure(), RHO)
    at = phi.phi(np.array(c.states, dtype=float))
    assert np.max(np.abs(at - np.array(c.phi)) / np.array(c.phi)) < 1e-10


def test_forward_on_chain_reproduces_breakpoint_values():
    V = chain_example()
    c = calibrate_bd(V, RHO)
    theta = np.array(V.theta[:-1])
    sol = solve_forward(c.to_speed_measure(), builtin("call"), RHO, theta)
    assert np.max(np.abs(sol.V.values - np.array(V.V[:-1]))) < 1e-12


def test_threshold_constant_between_breakpoints():
    V = chain_example()
    c = calibrate_bd(V, RHO)
    mids = np.array([(a + b) / 2 for a, b in zip(V.theta[:-2], V.theta[1:-1])])
    sol = solve_forward(c.to_speed_measure(), builtin("call"), RHO, mids)
    assert np.allclose(sol.x_star, c.states[:-1])


def test_csv_and_json_round_trips(tmp_path):
    V = chain_example(exact=True)
    path = tmp_path / "v.csv"
    V.to_csv(path)
    assert PiecewiseLinearValue.from_csv(path, exact=True) == V
    c = calibrate_bd(chain_example(), RHO)
    jpath = tmp_path / "chain.json"
    c.to_json(jpath)
    back = BirthDeathChain.from_json(jpath)
    assert back.to_dict() == c.to_dict()
    assert set(c.to_dict()) >= {"states", "p", "lambda", "masses"}
