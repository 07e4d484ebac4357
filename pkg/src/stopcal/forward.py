"""Forward problem: eigenfunction + payoff family -> value curve and thresholds."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .conventions import DEFAULT_TOLERANCES
from .diffusion import ABSORBING, Eigenfunction, SpeedMeasure, eigen_from_string
from .errors import ValidationError
from .payoffs import PayoffFamily
from .uconvex import DECREASING, INCREASING, GridFunction, SubdiffMap, u_dual

TAIL_FRACTION = 0.10
TAIL_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class ForwardSolution:
    theta: np.ndarray
    V: GridFunction
    v: np.ndarray
    x_star: np.ndarray
    attained: np.ndarray
    subdiff: SubdiffMap
    theta_R: float
    theta_L: float
    tail: np.ndarray
    orientation: str
    phi: Eigenfunction
    empty_contiguous: bool

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["theta", "V", "x_star", "attained"])
        for t, V, xs, a in zip(self.theta, self.V.values, self.x_star, self.attained):
            w.writerow([repr(float(t)), _fmt(V), "" if np.isnan(xs) else repr(float(xs)), int(bool(a))])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def _fmt(x: float) -> str:
    return "inf" if x == np.inf else repr(float(x))


def read_forward_csv(source) -> dict:
    text = Path(source).read_text() if "\n" not in str(source) else source
    rows = list(csv.DictReader(io.StringIO(text)))
    return {
        "theta": np.array([float(r["theta"]) for r in rows]),
        "V": np.array([float(r["V"]) for r in rows]),
        "x_star": np.array([float(r["x_star"]) if r["x_star"] else np.nan for r in rows]),
        "attained": np.array([r["attained"] == "1" for r in rows]),
    }


def _as_eigenfunction(X, rho: float) -> tuple[Eigenfunction, bool]:
    """Eigenfunction plus whether the last finite node is attainable."""
    if isinstance(X, SpeedMeasure):
        phi = eigen_from_string(X, rho)
        lo, hi = phi.phi.finite_range
        closed = X.xi_kind == ABSORBING and phi.grid[hi - 1] >= X.xi * (1 - 1e-12)
        return phi, closed
    if isinstance(X, GridFunction):
        X = Eigenfunction(X, np.inf)
    if isinstance(X, Eigenfunction):
        return X, bool(np.isfinite(X.xi))
    raise ValidationError("X must be a SpeedMeasure, Eigenfunction or GridFunction of phi")


def tail_limsup(g_tail: np.ndarray, tol: float = TAIL_TOL) -> float:
    """Stabilised limsup of a tail sequence; +inf if it is still rising."""
    if len(g_tail) == 0:
        return -np.inf
    top = float(np.max(g_tail))
    rise = float(g_tail[-1] - g_tail[0])
    if g_tail[-1] >= top and rise > tol * max(1.0, abs(top)):
        return np.inf
    return top


def solve_forward(
    X,
    p: PayoffFamily,
    rho: float,
    theta_grid,
    *,
    tie_tol: float = DEFAULT_TOLERANCES.tie_tol,
    tail_tol: float = TAIL_TOL,
) -> ForwardSolution:
    """v = psi^g on the theta grid with thresholds, theta_R and tail values."""
    if not rho > 0:
        raise ValidationError("rho must be positive")
    if p.sm_orientation not in (INCREASING, DECREASING):
        raise ValidationError("payoff family failed Spence-Mirrlees verification")
    theta = np.asarray(theta_grid, dtype=float)
    if theta.ndim != 1 or len(theta) < 1 or np.any(np.diff(theta) <= 0):
        raise ValidationError("theta grid must be strictly increasing")
    phi, closed = _as_eigenfunction(X, rho)
    psi = phi.psi
    res = u_dual(psi, p.coupling(), theta, tie_tol=tie_tol)
    empty = res.excluded | (res.boundary & (not closed))
    sd = res.argmax.without(empty)
    v = res.values.copy()
    tail = np.full(len(theta), np.nan)
    lo, hi = psi.finite_range
    n_tail = max(2, int(np.ceil(TAIL_FRACTION * (hi - lo))))
    xt = psi.grid[hi - n_tail : hi]
    pt = psi.values[hi - n_tail : hi]
    for j in np.flatnonzero(empty & ~res.excluded):
        with np.errstate(divide="ignore", invalid="ignore"):
            seq = np.asarray(p.g(xt, theta[j]), dtype=float) - pt
        tail[j] = tail_limsup(seq, tail_tol)
        v[j] = max(v[j], tail[j])
    v = np.where(res.excluded, -np.inf, v)
    with np.errstate(over="ignore"):
        V = np.exp(v)
    x_star = sd.representatives()
    attained = sd.nonempty
    theta_R, theta_L = np.inf, -np.inf
    idx_empty = np.flatnonzero(~attained)
    if p.sm_orientation == INCREASING:
        if len(idx_empty):
            theta_R = float(theta[idx_empty[0]])
        contiguous = len(idx_empty) == 0 or bool(np.all(~attained[idx_empty[0] :]))
    else:
        if len(idx_empty):
            theta_L = float(theta[idx_empty[-1]])
        contiguous = len(idx_empty) == 0 or bool(np.all(~attained[: idx_empty[-1] + 1]))
    return ForwardSolution(
        theta=theta,
        V=GridFunction(theta, V, "theta"),
        v=v,
        x_star=x_star,
        attained=attained,
        subdiff=sd,
        theta_R=theta_R,
        theta_L=theta_L,
        tail=tail,
        orientation=p.sm_orientation,
        phi=phi,
        empty_contiguous=contiguous,
    )


@dataclass(frozen=True)
class LipschitzReport:
    intervals: list
    endpoint_divergent: bool
    endpoint_ratio: float


def lipschitz_report(sol: ForwardSolution, n_intervals: int = 4, edge_fraction: float = 0.05) -> LipschitzReport:
    """Max difference quotients of v on compact pieces of the attained range."""
    idx = np.flatnonzero(sol.attained & np.isfinite(sol.v))
    if len(idx) < 3:
        return LipschitzReport([], False, 1.0)
    t = sol.theta[idx]
    v = sol.v[idx]
    q = np.abs(np.diff(v) / np.diff(t))
    edges = np.linspace(0, len(q), n_intervals + 1).astype(int)
    intervals = []
    for a, b in zip(edges[:-1], edges[1:]):
        if b > a:
            intervals.append({"lo": float(t[a]), "hi": float(t[b]), "lipschitz": float(q[a:b].max())})
    k = max(1, int(edge_fraction * len(q)))
    if sol.orientation == INCREASING:
        edge, bulk = q[-k:], q[:-k]
    else:
        edge, bulk = q[:k], q[k:]
    base = float(bulk.max()) if len(bulk) else float(edge.max())
    ratio = float(edge.max()) / base if base > 0 else 1.0
    return LipschitzReport(intervals, ratio > 1.5, ratio)
