import numpy as np
import pytest

from stopcal.errors import EmptyEffectiveDomain, NotUConvex, ValidationError
from stopcal.payoffs import builtin
from stopcal.uconvex import (
    DECREASING,
    INCREASING,
    Coupling,
    GridFunction,
    SubdiffMap,
    check_monotone,
    is_u_convex,
    subdifferential,
    u_double_dual,
    u_dual,
    u_dual_monotone,
)

from conftest import grid

LINEAR = builtin("linear").coupling()
POWER = builtin("power").coupling()


def test_gridfunction_invariants():
    with pytest.raises(ValidationError):
        GridFunction(np.array([0.0, 0.0, 1.0]), np.zeros(3))
    with pytest.raises(ValidationError):
        GridFunction(np.array([0.0]), np.zeros(1))
    with pytest.raises(ValidationError):
        GridFunction(np.arange(3.0), np.array([0.0, -np.inf, 1.0]))
    with pytest.raises(ValidationError):
        GridFunction(np.arange(3.0), np.array([0.0, np.inf, 1.0]))
    f = GridFunction(np.arange(4.0), np.array([np.inf, 1.0, 2.0, np.inf]))
    assert f.finite_range == (1, 3)
    assert f(1.5) == pytest.approx(1.5)
    assert f(0.5) == np.inf


def test_gridfunction_csv_round_trip(tmp_path):
    f = GridFunction(np.array([0.0, 0.1, 0.2]), np.array([1.0, 1 / 3, np.inf]), "theta")
    path = tmp_path / "f.csv"
    text = f.to_csv(path)
    assert text.splitlines()[0] == "coord,value"
    assert "inf" in text
    assert GridFunction.from_csv(path, "theta") == f


def test_dual_of_single_affine_section():
    y = grid(0.0, 5.0, 0.01)
    z0, a = 0.7, 0.3
    f = GridFunction(y, z0 * y + a)
    res = u_dual(f, LINEAR, np.array([z0, z0 + 0.1]))
    assert res.values[0] == pytest.approx(-a, abs=1e-12)


def test_dual_of_log_cosh_matches_closed_form():
    y = grid(0.0, 8.0, 1e-3)
    f = GridFunction(y, np.log(np.cosh(y)))
    res = u_dual(f, LINEAR, np.array([0.5, 0.6]))
    assert res.values[0] == pytest.approx(0.130812, abs=1e-5)
    # the argmax sits at atanh(0.5)
    assert res.argmax.lower[0] == pytest.approx(np.arctanh(0.5), abs=1e-3)


def test_dual_with_power_coupling():
    y = grid(0.0, 50.0, 1e-3)
    f = GridFunction(y, np.log1p(y**2))
    res = u_dual(f, POWER, np.array([1.0, 1.5]))
    assert res.values[0] == pytest.approx(-np.log(2), abs=1e-6)
    assert res.argmax.lower[0] == pytest.approx(1.0)


def test_empty_effective_domain():
    f = GridFunction(np.arange(3.0), np.full(3, np.inf))
    with pytest.raises(EmptyEffectiveDomain):
        u_dual(f, LINEAR, np.array([0.0]))


def test_excluded_candidates_give_plus_infinity():
    # every power section is -inf at x = 0 for theta > 0
    f = GridFunction(np.array([0.0, 1.0]), np.array([0.0, np.inf]))
    res = u_dual(f, POWER, np.array([0.0, 0.5]))
    assert res.excluded.tolist() == [False, True]
    assert res.values[0] == 0.0 and res.values[1] == np.inf


def test_boundary_flag_when_argmax_hits_last_node():
    y = grid(0.0, 2.0, 0.01)
    f = GridFunction(y, y**2 / 2)
    res = u_dual(f, LINEAR, np.array([1.0, 5.0]))
    assert res.boundary.tolist() == [False, True]


def test_double_dual_is_a_minorant():
    y = grid(0.0, 3.0, 0.01)
    rng = np.random.default_rng(1)
    f = GridFunction(y, rng.uniform(0, 1, len(y)))
    ff = u_double_dual(f, LINEAR, grid(-5.0, 5.0, 0.01))
    assert np.all(ff.values <= f.values + 1e-12)


def test_is_u_convex_accepts_convex_and_rejects_concave():
    y = grid(0.0, 4.0, 0.01)
    z = grid(0.0, 2.0, 0.005)
    ok, dev = is_u_convex(GridFunction(y, np.log(np.cosh(y))), LINEAR, z, 1e-3)
    assert ok and dev < 1e-3
    ok, dev = is_u_convex(GridFunction(y, np.sqrt(y)), LINEAR, z, 1e-3)
    assert not ok and dev > 0.1


def test_subdifferential_representative_tracks_threshold():
    y = grid(0.0, 8.0, 1e-3)
    f = GridFunction(y, np.log(np.cosh(y)))
    theta = np.array([0.2, 0.5, 0.8])
    sd = subdifferential(f, LINEAR, theta, tol=1e-3, check=False)
    reps = sd.representatives()
    assert np.all(np.abs(reps - np.arctanh(theta)) <= 1e-3)


def test_subdifferential_interval_on_linear_segment():
    # convex, C1, with a unit-slope segment on [1, 2]
    y = grid(0.0, 4.0, 0.01)
    f = np.where(y <= 1, y**2 / 2, np.where(y <= 2, y - 0.5, (y - 2) ** 2 / 2 + y - 0.5))
    sd = subdifferential(GridFunction(y, f), LINEAR, np.array([1.0, 1.5]), check=False)
    assert sd.lower[0] == pytest.approx(1.0) and sd.upper[0] == pytest.approx(2.0)


def test_subdifferential_empty_beyond_theta_r():
    y = grid(0.0, 200.0, 0.01)
    f = GridFunction(y, np.log1p(y**2))
    sd = subdifferential(f, POWER, np.array([1.0, 2.5]), open_right=True, check=False)
    assert sd.nonempty.tolist() == [True, False]


def test_subdifferential_rejects_non_convex_input():
    y = grid(0.0, 4.0, 0.01)
    with pytest.raises(NotUConvex):
        subdifferential(GridFunction(y, np.sqrt(y)), LINEAR, grid(0.0, 2.0, 0.01), tol=1e-3)


def test_check_monotone():
    y = grid(0.0, 8.0, 1e-2)
    f = GridFunction(y, np.log(np.cosh(y)))
    sd = subdifferential(f, LINEAR, grid(0.0, 0.95, 0.01), check=False)
    assert check_monotone(sd, INCREASING)
    shuffled = SubdiffMap(tuple(reversed(sd.sets)), sd.source_grid, sd.target_grid)
    assert not check_monotone(shuffled, INCREASING)
    assert check_monotone(shuffled, DECREASING)


def test_reverse_orientation_gives_nonincreasing_representatives():
    fam = builtin("separable", {"w": "negate"})
    assert fam.sm_orientation == DECREASING
    y = grid(0.0, 6.0, 0.01)
    f = GridFunction(y, np.log(np.cosh(y)))
    theta = grid(-0.9, 0.0, 0.01)
    sd = subdifferential(f, fam.coupling(), theta, check=False)
    # brute force: argmax of -theta*x - log cosh x
    table = -theta[None, :] * y[:, None] - f.values[:, None]
    brute = y[np.argmax(table, axis=0)]
    assert np.allclose(sd.representatives(), brute)
    assert check_monotone(sd, DECREASING)


def test_monotone_dual_agrees_with_brute_force():
    rng = np.random.default_rng(5)
    y = np.sort(rng.uniform(0, 5, 300))
    f = GridFunction(y, np.cumsum(np.cumsum(rng.uniform(0, 1, 300))) / 300)
    z = grid(-1.0, 40.0, 0.05)
    brute = u_dual(f, LINEAR, z)
    fast, idx = u_dual_monotone(f, LINEAR, z, INCREASING)
    assert np.allclose(fast.values, brute.values, rtol=0, atol=1e-12)
    assert np.all(np.isin(idx, np.concatenate(brute.argmax.sets)))


def test_coupling_rejects_nan():
    bad = Coupling(eval=lambda y, z: np.full(np.broadcast(y, z).shape, np.nan))
    with pytest.raises(ValidationError):
        u_dual(GridFunction(np.arange(3.0), np.zeros(3)), bad, np.array([0.0]))
