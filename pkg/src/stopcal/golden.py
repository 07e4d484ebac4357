"""Golden worked examples with closed-form targets, run by ``stopcal examples``."""

from __future__ import annotations

import time
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.optimize import brentq

from .birthdeath import PiecewiseLinearValue, calibrate_bd
from .diffusion import Eigenfunction, SpeedMeasure, eigen_from_density, speed_from_eigen
from .forward import solve_forward
from .inverse import GSECTION, LEFT, RIGHT, UNIQUE, recover_measure, solve_inverse
from .mc import SimConfig, estimate_ctmc_laplace, estimate_laplace
from .payoffs import builtin
from .uconvex import GridFunction


@dataclass(frozen=True)
class GoldenResult:
    name: str
    passed: bool
    measured: float
    target: float
    tol: float
    seconds: float
    detail: str = ""


def _grid(lo: float, hi: float, step: float) -> np.ndarray:
    n = int(round((hi - lo) / step))
    return np.round(lo + step * np.arange(n + 1), 12)


def bm_eigen(rho: float = 0.5, x_max: float = 10.0, step: float = 1e-3) -> Eigenfunction:
    x = _grid(0.0, x_max, step)
    return Eigenfunction(GridFunction(x, np.cosh(x * np.sqrt(2 * rho)), "x"))


def chain_example(n: int = 11, exact: bool = False) -> PiecewiseLinearValue:
    if exact:
        return PiecewiseLinearValue(
            tuple(k + Fraction(1, 2**k) - 2 for k in range(n)), tuple(Fraction(1, 2**k) for k in range(n))
        )
    return PiecewiseLinearValue(tuple(k + 2.0**-k - 2 for k in range(n)), tuple(2.0**-k for k in range(n)))


def bm_values(theta_step: float = 1e-3) -> GridFunction:
    """theta-sampled log value of reflecting BM with the linear family, infinite past theta = 1."""
    theta = _grid(0.0, 1.2, theta_step)
    sol = solve_forward(bm_eigen(), builtin("linear"), 0.5, theta)
    return GridFunction(theta, sol.v, "theta")


def sticky_values(theta_step: float = 1e-3) -> GridFunction:
    t = _grid(0.0, 12.0, theta_step)
    v = np.where(t <= 2, t**2 / 4, np.where(t <= 3, t - 1, 2 / (3 * np.sqrt(3)) * t**1.5))
    return GridFunction(t, v, "theta")


def concave_values() -> GridFunction:
    t = _grid(1.0, 3.0, 1e-3)
    return GridFunction(t, -0.5 - np.log(t), "theta")


def powers_values(n: int = 2000) -> GridFunction:
    t = np.linspace(1.0, 1.995, n)
    return GridFunction(t, t / 2 * np.log(t) + (2 - t) / 2 * np.log(2 - t) - np.log(2), "theta")


def ratio_root() -> float:
    return brentq(lambda lam: 1 - lam * np.tanh(lam), 0.5, 2.0, xtol=1e-15)


def ratio_values(n: int = 1500) -> GridFunction:
    lam = ratio_root()
    t = np.logspace(-9, 5, n)
    f = lambda x, th: x * x * np.tanh(x) - th * (1 - x * np.tanh(x))  # noqa: E731
    xs = np.array([brentq(f, 0.0, lam, args=(th,), xtol=1e-15) for th in t])
    return GridFunction(t, np.log(t * xs / (t + xs)) - np.log(np.cosh(xs)), "theta")


def section_values() -> GridFunction:
    t = _grid(0.0, 3.0, 1e-3)
    return GridFunction(t, np.where(t <= 1, t**2, 1.5 * t**2 - 0.5), "theta")


def fullcalc_closed_form(theta: np.ndarray) -> np.ndarray:
    r = np.sqrt(1 + theta**2)
    return r - 1 - np.log(theta**2 / (2 * (r - 1)))


def fullcalc_measure(coefficient: str = "stated", rho: float = 0.5, x_max: float = 0.99, step: float = 1e-4) -> SpeedMeasure:
    """Speed density 1/sigma^2 on [0, x_max]; ``consistent`` uses the coefficient that yields 1/(1-x^2)."""
    x = _grid(0.0, x_max, step)
    denom = 1 + x**2 if coefficient == "stated" else 1 + 3 * x**2
    sigma2 = rho * (1 - x**2) ** 2 / denom
    return SpeedMeasure(GridFunction(x, 1.0 / sigma2, "x"))


def _timed(name, fn, target, tol, compare="abs"):
    t0 = time.perf_counter()
    measured, ok, detail = fn()
    dt = time.perf_counter() - t0
    if ok is None:
        ok = abs(measured - target) <= tol
    return GoldenResult(name, bool(ok), float(measured), float(target), float(tol), dt, detail)


def _birthdeath():
    c = calibrate_bd(chain_example(exact=True), Fraction(1, 2))
    states_ok = all(c.states[k] == k for k in range(len(c.states)))
    phi_ok = all(c.phi[k] == 2 ** (k + 1) - 1 for k in range(len(c.phi)))
    lam_ok = all(c.lam[k] == 2 * (1 - Fraction(1, 2 ** (k + 1))) for k in range(1, len(c.lam)))
    p_ok = all(c.p[k] == Fraction(1, 2) for k in range(1, len(c.p)))
    return 0.0, states_ok and phi_ok and lam_ok and p_ok, "exact rational chain"


def _bm_forward():
    theta = _grid(0.0, 0.9, 1e-3)
    sol = solve_forward(bm_eigen(), builtin("linear"), 0.5, theta)
    err = float(np.max(np.abs(sol.v - (theta * np.arctanh(theta) + 0.5 * np.log(1 - theta**2)))))
    xs_err = float(np.max(np.abs(sol.x_star - np.arctanh(theta))))
    return err, err < 1e-3 and xs_err <= 2e-3, f"x* error {xs_err:.2e}"


def _fullcalc(coefficient):
    def run():
        theta = _grid(0.2, 5.0, 1e-3)
        phi = eigen_from_density(fullcalc_measure(coefficient), 0.5)
        sol = solve_forward(phi, builtin("linear"), 0.5, theta)
        err = float(np.max(np.abs(sol.v - fullcalc_closed_form(theta))))
        v1 = float(sol.v[np.searchsorted(theta, 1.0)])
        return v1, err < 2e-3 and abs(v1 - 0.225988) <= 2e-3, f"sup error {err:.3e}"

    return run


def _bm_inverse():
    rep = solve_inverse(bm_values(), builtin("linear"), 0.5, _grid(0.0, 6.0, 0.02))
    if not rep.consistent:
        return np.inf, False, rep.reason or ""
    m = recover_measure(rep, 0.5).candidate
    sel = (m.density.grid >= 0.1) & (m.density.grid <= 2.0)
    err = float(np.max(np.abs(m.density.values[sel] - 1.0)))
    ok = err <= 1e-2 and not m.atoms and rep.uniqueness == UNIQUE
    return err, ok, f"uniqueness={rep.uniqueness}"


def _sticky():
    rep = solve_inverse(sticky_values(), builtin("linear"), 0.5, _grid(0.0, 2.2, 0.01))
    if not rep.consistent:
        return 0.0, False, rep.reason or ""
    m = recover_measure(rep, 0.5).candidate
    if len(m.atoms) != 1:
        return 0.0, False, f"{len(m.atoms)} atoms"
    a = m.atoms[0]
    return a.mass, abs(a.x - 1.0) <= 0.01 and abs(a.mass - 1.0) <= 0.05, f"atom at {a.x:.4f}"


def _concave():
    v = concave_values()
    x = _grid(0.0, 8.0, 0.01)
    rep = solve_inverse(v, builtin("concave"), 0.5, x)
    fin = np.isfinite(rep.vg.values)
    err = float(np.max(np.abs(rep.vg.values[fin] - 0.5 * np.log1p(x[fin]))))
    ok = (not rep.consistent) and rep.reason == "e^{v^g} non-convex" and err <= 1e-6
    return err, ok, f"verdict={rep.verdict}"


def _powers():
    v = powers_values()
    p = builtin("power")
    rep = solve_inverse(v, p, 0.5, _grid(0.0, 30.0, 0.01))
    if not rep.consistent or rep.uniqueness != LEFT:
        return np.inf, False, f"uniqueness={rep.uniqueness}"
    best = np.inf
    for w in rep.witnesses:
        sol = solve_forward(w, p, 0.5, v.grid)
        ok = sol.attained & np.isfinite(sol.v)
        best = min(best, float(np.max(np.abs(sol.v[ok] - v.values[ok]))))
    return best, best <= 1e-3, f"{len(rep.witnesses)} witnesses"


def _ratio():
    rep = solve_inverse(ratio_values(), builtin("ratio"), 0.5, _grid(0.0, 3.0, 1e-4))
    ok = rep.consistent and rep.uniqueness == RIGHT
    return rep.x_plus, ok and abs(rep.x_plus - 1.19968) <= 1e-4, f"uniqueness={rep.uniqueness}"


def _section():
    x = _grid(0.0, 8.0, 0.01)
    rep = solve_inverse(section_values(), builtin("linear"), 0.5, x)
    if not rep.consistent or rep.uniqueness != GSECTION:
        return np.inf, False, f"uniqueness={rep.uniqueness}"
    sel = (x >= 2) & (x <= 3)
    target = np.log((np.e**2 - np.e) * x[sel] + 3 * np.e - 2 * np.e**2)
    errs = [float(np.max(np.abs(np.log(w.phi.values[sel]) - target)))
            for k, w in zip(rep.witness_kinds, rep.witnesses) if k == GSECTION]
    best = min(errs) if errs else np.inf
    return best, best <= 1e-6, ""


def _mc_bm():
    g = _grid(0.0, 3.0, 0.1)
    m = SpeedMeasure(GridFunction(g, np.ones_like(g), "x"))
    e = estimate_laplace(m, 0.5, 1.0, SimConfig(seed=20240607, paths=10_000, dt=1e-4, bridge=True))
    z = abs(e.mean - 1 / np.cosh(1.0)) / e.stderr
    return e.mean, z <= 3, f"stderr {e.stderr:.2e}, z={z:.2f}"


def _mc_chain():
    c = calibrate_bd(chain_example(), 0.5)
    e = estimate_ctmc_laplace(c, 0.5, 3, SimConfig(seed=20240607, paths=10_000, max_jumps=100_000))
    z = abs(e.mean - 1 / 15) / e.stderr
    return e.mean, z <= 3, f"stderr {e.stderr:.2e}, z={z:.2f}"


def run_all(include_mc: bool = True) -> list[GoldenResult]:
    rows = [
        _timed("birth-death chain on the integers", _birthdeath, 0.0, 0.0),
        _timed("reflecting BM forward values", _bm_forward, 0.0, 1e-3),
        _timed("closed-form v, stated sigma^2", _fullcalc("stated"), 0.225988, 2e-3),
        _timed("closed-form v, consistent sigma^2", _fullcalc("consistent"), 0.225988, 2e-3),
        _timed("inverse recovers reflecting BM", _bm_inverse, 0.0, 1e-2),
        _timed("sticky point at x = 1", _sticky, 1.0, 0.05),
        _timed("concave payoff is rejected", _concave, 0.0, 1e-6),
        _timed("power payoff left extensions", _powers, 0.0, 1e-3),
        _timed("ratio payoff right extensions", _ratio, 1.19968, 1e-4),
        _timed("g-section witness", _section, 0.0, 1e-6),
    ]
    if include_mc:
        rows.append(_timed("Monte Carlo, reflecting BM", _mc_bm, 1 / np.cosh(1.0), 0.0))
        rows.append(_timed("Monte Carlo, birth-death chain", _mc_chain, 1 / 15, 0.0))
    return rows
