"""Speed measures, eigenfunctions and the bridge between them.

The eigenfunction phi of a generalised diffusion reflected at 0 is the
increasing solution of (1/2) d/dm d/dx phi = rho phi with phi(0) = 1.
Propagation works on (psi, r) = (log phi, phi'/phi): within a cell of constant
density c the solution is an exact combination of cosh and sinh, and an atom
of mass M adds 2 rho M to r.  Working in log space never overflows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .conventions import (
    DEFAULT_TOLERANCES,
    LOG_PHI_INFINITY,
    central_first_differences,
    left_derivative3,
    right_derivative3,
    second_differences,
)
from .errors import DegenerateString, NotConvex, NotNormalized, ValidationError, ZeroCurvature
from .uconvex import GridFunction

ABSORBING = "absorbing"
NATURAL = "natural"


@dataclass(frozen=True)
class Atom:
    x: float
    mass: float


@dataclass(frozen=True, eq=False)
class SpeedMeasure:
    density: GridFunction
    atoms: tuple = ()
    xi: float = np.inf
    xi_kind: str = NATURAL
    mass_at_zero: float = 0.0

    def __post_init__(self):
        atoms = tuple(a if isinstance(a, Atom) else Atom(float(a[0]), float(a[1])) for a in self.atoms)
        grid = self.density.grid
        if grid[0] != 0.0:
            raise ValidationError("speed measure grid must start at 0")
        if not self.xi > 0:
            raise ValidationError("xi must be positive; the degenerate case xi = 0 is not supported")
        if self.xi_kind not in (ABSORBING, NATURAL):
            raise ValidationError(f"unknown xi_kind {self.xi_kind!r}")
        if grid[-1] > self.xi * (1 + 1e-12):
            raise ValidationError("density grid extends beyond xi")
        if np.any(self.density.values < 0):
            raise ValidationError("density must be nonnegative")
        if self.mass_at_zero < 0:
            raise ValidationError("mass_at_zero must be nonnegative")
        m0 = float(self.mass_at_zero)
        kept = []
        for a in atoms:
            if not a.mass > 0:
                raise ValidationError("atom masses must be positive")
            if a.x == 0.0:
                m0 += a.mass
                continue
            if not (0.0 < a.x < self.xi) or a.x > grid[-1]:
                raise ValidationError(f"atom at {a.x} outside [0, xi)")
            kept.append(a)
        object.__setattr__(self, "atoms", tuple(sorted(kept, key=lambda a: a.x)))
        object.__setattr__(self, "mass_at_zero", m0)

    @property
    def grid(self) -> np.ndarray:
        return self.density.grid

    def total_atom_mass(self) -> float:
        return self.mass_at_zero + sum(a.mass for a in self.atoms)

    def to_dict(self) -> dict:
        return {
            "grid": [float(x) for x in self.density.grid],
            "density": [_enc(v) for v in self.density.values],
            "atoms": [{"x": a.x, "mass": a.mass} for a in self.atoms],
            "xi": _enc(self.xi),
            "xi_kind": self.xi_kind,
            "mass_at_zero": self.mass_at_zero,
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    @classmethod
    def from_dict(cls, d: dict) -> "SpeedMeasure":
        try:
            grid = np.array([float(x) for x in d["grid"]])
            dens = np.array([float(x) for x in d["density"]])
        except KeyError as exc:
            raise ValidationError(f"speed measure JSON missing {exc.args[0]!r}") from None
        atoms = tuple(Atom(float(a["x"]), float(a["mass"])) for a in d.get("atoms", []))
        return cls(
            GridFunction(grid, dens, "x"),
            atoms,
            float(d.get("xi", "inf")),
            d.get("xi_kind", NATURAL),
            float(d.get("mass_at_zero", 0.0)),
        )

    @classmethod
    def from_json(cls, source) -> "SpeedMeasure":
        text = Path(source).read_text() if not str(source).lstrip().startswith("{") else source
        return cls.from_dict(json.loads(text))

    def __eq__(self, other) -> bool:
        if not isinstance(other, SpeedMeasure):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    __hash__ = None


def _enc(x: float):
    return "inf" if x == np.inf else float(x)


@dataclass(frozen=True, eq=False)
class Eigenfunction:
    phi: GridFunction
    xi: float = np.inf
    slopes: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        lo, hi = self.phi.finite_range
        if lo != 0 or hi == 0:
            raise ValidationError("eigenfunction must be finite from the first node")

    @property
    def grid(self) -> np.ndarray:
        return self.phi.grid

    @property
    def psi(self) -> GridFunction:
        with np.errstate(divide="ignore"):
            return self.phi.with_values(np.log(self.phi.values))

    def to_csv(self, path=None) -> str:
        return self.phi.to_csv(path, header=("x", "phi"))

    @classmethod
    def from_csv(cls, source) -> "Eigenfunction":
        phi = GridFunction.from_csv(source, "x")
        return cls(phi, _xi_of(phi))

    @classmethod
    def from_psi(cls, psi: GridFunction) -> "Eigenfunction":
        with np.errstate(over="ignore"):
            vals = np.where(psi.values > LOG_PHI_INFINITY, np.inf, np.exp(psi.values))
        phi = GridFunction(psi.grid, vals, "x")
        return cls(phi, _xi_of(phi))


def _xi_of(phi: GridFunction) -> float:
    lo, hi = phi.finite_range
    return float(phi.grid[hi - 1]) if hi < len(phi.grid) else np.inf


@dataclass(frozen=True)
class ScaleSpec:
    """Scale data for the smooth drift case.

    Either ``mu`` (with ``sigma``, or sigma taken from the speed density) or
    ``s_prime`` (derivative of the scale function on a grid).
    """

    mu: Callable | GridFunction | None = None
    sigma: Callable | GridFunction | None = None
    s_prime: GridFunction | None = None

    def __post_init__(self):
        if (self.mu is None) == (self.s_prime is None):
            raise ValidationError("give exactly one of mu or s_prime")
        if self.s_prime is not None and np.any(self.s_prime.values <= 0):
            raise ValidationError("s' must be positive")


def _merge_atoms(m: SpeedMeasure) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Grid with atom locations inserted, density on it, atom mass per node."""
    grid = m.density.grid
    dens = m.density.values
    locs = np.array([a.x for a in m.atoms], dtype=float)
    extra = locs[~np.isin(locs, grid)] if len(locs) else locs
    if len(extra):
        new_grid = np.union1d(grid, extra)
        new_dens = np.interp(new_grid, grid, np.where(np.isfinite(dens), dens, 0.0))
        new_dens = np.where(np.isin(new_grid, grid), np.interp(new_grid, grid, dens), new_dens)
        # keep +inf where the original density was infinite
        inf_from = grid[np.isinf(dens)]
        if len(inf_from):
            new_dens[new_grid >= inf_from[0]] = np.inf
        grid, dens = new_grid, new_dens
    mass = np.zeros(len(grid))
    for a in m.atoms:
        mass[np.searchsorted(grid, a.x)] += a.mass
    mass[0] += m.mass_at_zero
    return grid, dens, mass


def _log_cosh(y: float) -> float:
    return y + np.log1p(np.exp(-2.0 * y)) - np.log(2.0)


def propagate(grid: np.ndarray, density: np.ndarray, node_mass: np.ndarray, rho: float):
    """March (psi, r) across cells; returns psi, r just left and right of each node."""
    if not rho > 0:
        raise ValidationError("rho must be positive")
    n = len(grid)
    psi = np.full(n, np.inf)
    r_left = np.full(n, np.inf)
    r_right = np.full(n, np.inf)
    two_rho = 2.0 * rho
    psi[0] = 0.0
    r_left[0] = 0.0
    r = two_rho * node_mass[0]
    r_right[0] = r
    for i in range(n - 1):
        h = grid[i + 1] - grid[i]
        d0, d1 = density[i], density[i + 1]
        if not (np.isfinite(d0) and np.isfinite(d1)):
            break
        c = 0.5 * (d0 + d1)
        if c > 0:
            k = np.sqrt(two_rho * c)
            y = k * h
            a = r / k
            t = np.tanh(y)
            step = _log_cosh(y) + np.log1p(a * t)
            r = k * (t + a) / (1.0 + a * t)
        else:
            step = np.log1p(r * h)
            r = r / (1.0 + r * h)
        psi[i + 1] = psi[i] + step
        r_left[i + 1] = r
        r = r + two_rho * node_mass[i + 1]
        r_right[i + 1] = r
        if psi[i + 1] > LOG_PHI_INFINITY:
            psi[i + 1 :] = np.inf
            break
    return psi, r_left, r_right


def _to_eigenfunction(grid, psi, r_left, r_right) -> Eigenfunction:
    fin = np.isfinite(psi)
    phi_vals = np.where(fin, np.exp(np.where(fin, psi, 0.0)), np.inf)
    phi = GridFunction(grid, phi_vals, "x")
    slopes = (tuple(np.where(fin, r_left * phi_vals, np.inf)), tuple(np.where(fin, r_right * phi_vals, np.inf)))
    return Eigenfunction(phi, _xi_of(phi), slopes)


def _check_not_degenerate(density: np.ndarray) -> None:
    if not np.isfinite(density[0]) or (len(density) > 1 and not np.isfinite(density[1])):
        raise DegenerateString("measure is infinite on every neighbourhood of 0")


def eigen_from_string(m: SpeedMeasure, rho: float) -> Eigenfunction:
    """Eigenfunction of an arbitrary string: densities, gaps and atoms."""
    grid, dens, mass = _merge_atoms(m)
    _check_not_degenerate(dens)
    psi, rl, rr = propagate(grid, dens, mass, rho)
    return _to_eigenfunction(grid, psi, rl, rr)


def eigen_from_density(m: SpeedMeasure, rho: float) -> Eigenfunction:
    """Eigenfunction for an absolutely continuous speed measure."""
    if m.atoms or m.mass_at_zero > 0:
        raise ValidationError("eigen_from_density takes a measure without atoms; use eigen_from_string")
    dens = m.density.values
    _check_not_degenerate(dens)
    fin = np.isfinite(dens)
    if np.any(dens[1:-1][fin[1:-1]] <= 0):
        raise ValidationError("density must be strictly positive on the interior")
    return eigen_from_string(m, rho)


def _local_scale(jumps: np.ndarray, i: int, window: int = 4) -> float:
    lo = max(1, i - window)
    hi = min(len(jumps) - 1, i + window + 1)
    neigh = np.concatenate([jumps[lo:i], jumps[i + 1 : hi]])
    if neigh.size == 0:
        return 0.0
    return float(np.median(np.abs(neigh)))


def speed_from_eigen(
    phi: Eigenfunction | GridFunction,
    rho: float,
    *,
    kink_factor: float = DEFAULT_TOLERANCES.kink_factor,
    convexity_tol: float = DEFAULT_TOLERANCES.convexity_tol,
) -> SpeedMeasure:
    """Recover the speed measure: density phi''/(2 rho phi) plus atoms at kinks."""
    f = phi.phi if isinstance(phi, Eigenfunction) else phi
    if not rho > 0:
        raise ValidationError("rho must be positive")
    lo, hi = f.finite_range
    if lo != 0 or hi < 3:
        raise ValidationError("eigenfunction needs at least three finite nodes from 0")
    x = f.grid[:hi]
    y = f.values[:hi]
    if abs(y[0] - 1.0) > 1e-9:
        raise NotNormalized(f"phi(0) = {y[0]!r}, expected 1")
    h = np.diff(x)
    s = np.diff(y) / h
    scale = float(np.max(np.abs(s))) + 1.0
    if np.any(s < -convexity_tol * scale):
        raise NotConvex("phi is not nondecreasing")
    # slope jumps; node 0 uses the reflecting ghost slope 0
    jumps = np.empty(hi)
    jumps[0] = s[0]
    jumps[1:-1] = np.diff(s)
    jumps[-1] = 0.0
    if np.any(jumps[1:-1] < -convexity_tol * scale):
        worst = int(np.argmin(jumps[1:-1])) + 1
        raise NotConvex(f"phi fails convexity near x = {x[worst]:.6g}")
    jumps = np.maximum(jumps, 0.0)
    # slope differences at rounding level are zero curvature, not density
    mag = np.abs(y)
    noise = np.empty(hi)
    noise[0] = mag[0] + mag[1]
    noise[1:-1] = mag[:-2] + 2 * mag[1:-1] + mag[2:]
    noise[-1] = 0.0
    jumps = np.where(jumps <= 64 * np.finfo(float).eps * noise / np.min(h), 0.0, jumps)
    width = np.empty(hi)
    width[0] = h[0] / 2.0
    width[1:-1] = 0.5 * (h[:-1] + h[1:])
    width[-1] = h[-1] / 2.0
    density = jumps / width / (2.0 * rho * y)
    floor = 1e-10 * scale
    atom_nodes = []
    for i in range(1, hi - 1):
        if jumps[i] > kink_factor * max(_local_scale(jumps, i), floor):
            atom_nodes.append(i)
    atoms = []
    for i in atom_nodes:
        dm = left_derivative3(x, y, i)
        dp = right_derivative3(x, y, i)
        mass = (dp - dm) / (2.0 * rho * y[i])
        if mass > 0:
            atoms.append(Atom(float(x[i]), float(mass)))
        neighbours = [j for j in (i - 1, i + 1) if 0 < j < hi - 1 and j not in atom_nodes]
        density[i] = float(np.mean(density[neighbours])) if neighbours else 0.0
    mass0 = 0.0
    if jumps[0] > kink_factor * max(float(np.median(jumps[1 : min(hi - 1, 6)])), floor):
        mass0 = max(0.0, right_derivative3(x, y, 0) / (2.0 * rho))
        density[0] = density[1]
    density[-1] = density[-2]
    xi = np.inf if hi == len(f.grid) else float(x[-1])
    kind = NATURAL if hi == len(f.grid) else ABSORBING
    dens_fn = GridFunction(x, density, "x")
    return SpeedMeasure(dens_fn, tuple(atoms), xi, kind, mass0)


def eigen_with_scale(
    m: SpeedMeasure | None,
    s: ScaleSpec,
    rho: float,
    x_grid=None,
    *,
    slope0: float = 0.0,
) -> Eigenfunction:
    """Increasing solution of (1/2) sigma^2 f'' + mu f' = rho f, f(0)=1, f'(0)=slope0.

    The result need not be convex.
    """
    from scipy.integrate import solve_ivp

    if not rho > 0:
        raise ValidationError("rho must be positive")
    if x_grid is None:
        if m is None:
            raise ValidationError("need a grid or a speed measure")
        x_grid = m.grid
    x = np.asarray(x_grid, dtype=float)
    if x[0] != 0.0:
        raise ValidationError("grid must start at 0")

    def as_callable(obj):
        if obj is None:
            return None
        if isinstance(obj, GridFunction):
            return lambda t: np.interp(t, obj.grid, obj.values)
        return obj

    if s.mu is not None:
        mu = as_callable(s.mu)
        if s.sigma is not None:
            sig = as_callable(s.sigma)
            sigma2 = lambda t: sig(t) ** 2  # noqa: E731
        else:
            if m is None:
                raise ValidationError("sigma or a speed density is required")
            dens = as_callable(m.density)
            sigma2 = lambda t: 1.0 / dens(t)  # noqa: E731
    else:
        if m is None:
            raise ValidationError("s_prime needs a speed density")
        sp = s.s_prime
        spp = GridFunction(sp.grid, np.gradient(sp.values, sp.grid), "x")
        dens = as_callable(m.density)
        sp_c, spp_c = as_callable(sp), as_callable(spp)
        sigma2 = lambda t: 1.0 / (dens(t) * sp_c(t))  # noqa: E731
        mu = lambda t: -sigma2(t) * spp_c(t) / (2.0 * sp_c(t))  # noqa: E731

    def rhs(t, state):
        r = state[1]
        return [r, 2.0 * (rho - mu(t) * r) / sigma2(t) - r * r]

    sol = solve_ivp(rhs, (x[0], x[-1]), [0.0, slope0], t_eval=x, method="DOP853", rtol=1e-11, atol=1e-13)
    if not sol.success:
        raise ValidationError(f"integration failed: {sol.message}")
    psi = sol.y[0]
    return Eigenfunction.from_psi(GridFunction(x, psi, "x"))


@dataclass(frozen=True, eq=False)
class VolCurve:
    x: np.ndarray
    eta: np.ndarray
    defined: np.ndarray


def stock_vol_from_eigen(
    phi: Eigenfunction | GridFunction,
    rho: float,
    delta: float,
    *,
    curvature_tol: float = 1e-12,
) -> VolCurve:
    """Local volatility eta(x) from a decreasing convex eigenfunction.

    eta^2 = 2 [rho phi - (rho - delta) x phi'] / (x^2 phi''); nodes with
    vanishing curvature are returned as gaps (NaN, defined=False).
    """
    f = phi.phi if isinstance(phi, Eigenfunction) else phi
    lo, hi = f.finite_range
    x = f.grid[lo:hi]
    y = f.values[lo:hi]
    if len(x) < 3:
        raise ValidationError("need at least three finite nodes")
    if np.any(x <= 0):
        raise ValidationError("stock eigenfunction grid must be positive")
    d1 = central_first_differences(x, y)
    d2 = second_differences(x, y)
    xi = x[1:-1]
    yi = y[1:-1]
    ok = np.abs(d2) > curvature_tol * np.abs(yi)
    with np.errstate(divide="ignore", invalid="ignore"):
        eta2 = 2.0 * (rho * yi - (rho - delta) * xi * d1) / (xi**2 * d2)
    ok &= eta2 > 0
    if not ok.any():
        raise ZeroCurvature("phi has no curvature on the grid")
    eta = np.where(ok, np.sqrt(np.where(ok, eta2, 1.0)), np.nan)
    return VolCurve(xi, eta, ok)
