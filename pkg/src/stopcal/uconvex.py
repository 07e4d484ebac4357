"""Grid-based generalised convexity: u-duals, double duals and subdifferentials.

A coupling ``u(y, z)`` pairs two axes.  For a function ``f`` sampled on the
y-axis its u-dual is ``f^u(z) = max_y [u(y, z) - f(y)]``, taken over grid
nodes only.  Values of ``+inf`` in ``f`` mark nodes outside the effective
domain and never take part in a maximum; ``u = -inf`` entries (payoff zero)
are skipped in the same way.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .conventions import DEFAULT_TOLERANCES, trap_nan
from .errors import EmptyEffectiveDomain, NotUConvex, ValidationError

INCREASING = "increasing"
DECREASING = "decreasing"
UNKNOWN = "unknown"
ORIENTATIONS = (INCREASING, DECREASING, UNKNOWN)

_CHUNK_ENTRIES = 4_000_000


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Extended-real function sampled on a strictly increasing grid."""

    grid: np.ndarray
    values: np.ndarray
    domain_tag: str = "x"

    def __post_init__(self):
        grid = trap_nan(self.grid, "grid").copy()
        values = trap_nan(self.values, "values").copy()
        if grid.ndim != 1 or values.shape != grid.shape:
            raise ValidationError("grid and values must be 1-d arrays of equal length")
        if len(grid) < 2:
            raise ValidationError("a grid needs at least two nodes")
        if not np.all(np.isfinite(grid)):
            raise ValidationError("grid nodes must be finite")
        if not np.all(np.diff(grid) > 0):
            raise ValidationError("grid must be strictly increasing")
        if np.any(values == -np.inf):
            raise ValidationError("values may not be -inf")
        finite = np.flatnonzero(np.isfinite(values))
        if len(finite) and finite[-1] - finite[0] + 1 != len(finite):
            raise ValidationError("finite values must occupy a contiguous block of nodes")
        grid.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.grid)

    def __eq__(self, other) -> bool:
        if not isinstance(other, GridFunction):
            return NotImplemented
        return (
            self.domain_tag == other.domain_tag
            and np.array_equal(self.grid, other.grid)
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None

    @property
    def finite_mask(self) -> np.ndarray:
        return np.isfinite(self.values)

    @property
    def finite_range(self) -> tuple[int, int]:
        """Half-open index range of finite values; (0, 0) when none."""
        idx = np.flatnonzero(self.finite_mask)
        if len(idx) == 0:
            return 0, 0
        return int(idx[0]), int(idx[-1]) + 1

    def __call__(self, x):
        """Piecewise-linear interpolation; +inf outside the finite block."""
        x = np.asarray(x, dtype=float)
        lo, hi = self.finite_range
        if hi - lo == 0:
            return np.full_like(x, np.inf)
        g = self.grid[lo:hi]
        v = self.values[lo:hi]
        out = np.interp(x, g, v) if hi - lo > 1 else np.full_like(x, v[0])
        outside = (x < g[0] - 1e-12 * max(1.0, abs(g[0]))) | (x > g[-1] + 1e-12 * max(1.0, abs(g[-1])))
        return np.where(outside, np.inf, out)

    def with_values(self, values) -> "GridFunction":
        return GridFunction(self.grid, values, self.domain_tag)

    def to_csv(self, target=None, header: tuple[str, str] = ("coord", "value")) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        for x, y in zip(self.grid, self.values):
            writer.writerow([repr(float(x)), "inf" if y == np.inf else repr(float(y))])
        text = buf.getvalue()
        if target is not None:
            Path(target).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source, domain_tag: str = "x") -> "GridFunction":
        text = Path(source).read_text() if not _looks_like_csv_text(source) else source
        rows = list(csv.reader(io.StringIO(text)))
        if not rows:
            raise ValidationError("empty CSV")
        body = rows[1:] if _is_header(rows[0]) else rows
        grid, values = [], []
        for row in body:
            if not row:
                continue
            if len(row) < 2:
                raise ValidationError(f"malformed CSV row {row!r}")
            grid.append(float(row[0]))
            values.append(float(row[1]))
        return cls(np.array(grid), np.array(values), domain_tag)


def _looks_like_csv_text(source) -> bool:
    return isinstance(source, str) and ("\n" in source or "," in source)


def _is_header(row) -> bool:
    try:
        float(row[0])
        return False
    except ValueError:
        return True


@dataclass(frozen=True)
class Coupling:
    """Coupling u(y, z) with optional analytic partials.

    ``eval`` must broadcast over numpy arrays and return ``-inf`` where the
    underlying payoff vanishes.
    """

    eval: Callable[[np.ndarray, np.ndarray], np.ndarray]
    d_y: Callable | None = None
    d_z: Callable | None = None
    d_yz: Callable | None = None
    y_domain: tuple[float, float] = (-np.inf, np.inf)
    z_domain: tuple[float, float] = (-np.inf, np.inf)
    sm_orientation: str = UNKNOWN

    def __post_init__(self):
        if self.sm_orientation not in ORIENTATIONS:
            raise ValidationError(f"unknown orientation {self.sm_orientation!r}")

    def __call__(self, y, z):
        return self.eval(y, z)

    def table(self, y: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Matrix u(y_i, z_j) with shape (len(y), len(z))."""
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.asarray(self.eval(y[:, None], z[None, :]), dtype=float)
        out = np.broadcast_to(out, (len(y), len(z)))
        if np.isnan(out).any():
            raise ValidationError("coupling produced NaN")
        if np.any(out == np.inf):
            raise ValidationError("coupling produced +inf")
        return out

    def swap(self) -> "Coupling":
        """Same coupling with the roles of the two axes exchanged."""
        ev, dy, dz, dyz = self.eval, self.d_y, self.d_z, self.d_yz
        return Coupling(
            eval=lambda z, y: ev(y, z),
            d_y=(lambda z, y: dz(y, z)) if dz is not None else None,
            d_z=(lambda z, y: dy(y, z)) if dy is not None else None,
            d_yz=(lambda z, y: dyz(y, z)) if dyz is not None else None,
            y_domain=self.z_domain,
            z_domain=self.y_domain,
            sm_orientation=self.sm_orientation,
        )


@dataclass(frozen=True, eq=False)
class SubdiffMap:
    """Argmax index sets on a source grid, one set per target node.

    ``z_star`` is the smallest attaining index (``-1`` for an empty set).
    Hull endpoints are source-grid coordinates, NaN when the set is empty.
    """

    sets: tuple
    source_grid: np.ndarray
    target_grid: np.ndarray
    z_star: np.ndarray = field(init=False)
    lower: np.ndarray = field(init=False)
    upper: np.ndarray = field(init=False)

    def __post_init__(self):
        n = len(self.sets)
        star = np.full(n, -1, dtype=int)
        top = np.full(n, -1, dtype=int)
        for k, s in enumerate(self.sets):
            if len(s):
                star[k] = int(s[0])
                top[k] = int(s[-1])
        grid = np.asarray(self.source_grid, dtype=float)
        lower = np.where(star >= 0, grid[np.maximum(star, 0)], np.nan)
        upper = np.where(top >= 0, grid[np.maximum(top, 0)], np.nan)
        object.__setattr__(self, "z_star", star)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def nonempty(self) -> np.ndarray:
        return self.z_star >= 0

    @property
    def top_index(self) -> np.ndarray:
        return np.array([int(s[-1]) if len(s) else -1 for s in self.sets], dtype=int)

    def representatives(self) -> np.ndarray:
        """Selected source coordinate per target node; NaN where empty."""
        return self.lower.copy()

    def without(self, drop: np.ndarray) -> "SubdiffMap":
        """Copy with the sets at the flagged target nodes emptied."""
        empty = np.array([], dtype=int)
        sets = tuple(empty if d else s for s, d in zip(self.sets, drop))
        return SubdiffMap(sets, self.source_grid, self.target_grid)


@dataclass(frozen=True, eq=False)
class DualResult:
    function: GridFunction
    argmax: SubdiffMap
    boundary: np.ndarray
    excluded: np.ndarray

    @property
    def values(self) -> np.ndarray:
        return self.function.values


def _tie_threshold(best: np.ndarray, tie_tol: float) -> np.ndarray:
    return best - tie_tol * np.maximum(1.0, np.abs(best))


def u_dual(
    f: GridFunction,
    u: Coupling,
    out_grid,
    *,
    tie_tol: float = DEFAULT_TOLERANCES.tie_tol,
    out_tag: str | None = None,
) -> DualResult:
    """Brute-force u-dual of ``f`` on ``out_grid`` with full argmax sets.

    ``boundary[j]`` is set when the argmax set at output node ``j`` contains
    the last finite node of ``f`` (the supremum may only be a limsup there).
    ``excluded[j]`` is set when no candidate was admissible; the value is then
    ``+inf`` by the effective-domain convention.
    """
    z = trap_nan(out_grid, "out_grid")
    finite = np.flatnonzero(f.finite_mask)
    if len(finite) == 0:
        raise EmptyEffectiveDomain("f is +inf at every node")
    y = f.grid[finite]
    fy = f.values[finite]
    ny, nz = len(y), len(z)
    best = np.empty(nz)
    sets: list[np.ndarray] = [None] * nz  # type: ignore[list-item]
    step = max(1, _CHUNK_ENTRIES // max(ny, 1))
    for start in range(0, nz, step):
        zc = z[start : start + step]
        m = u.table(y, zc) - fy[:, None]
        b = m.max(axis=0)
        best[start : start + len(zc)] = b
        thr = np.where(np.isfinite(b), _tie_threshold(b, tie_tol), np.inf)
        cols, rows = np.nonzero((m >= thr[None, :]).T)
        splits = np.searchsorted(cols, np.arange(1, len(zc)))
        for k, part in enumerate(np.split(rows, splits)):
            sets[start + k] = finite[part]
    excluded = best == -np.inf
    values = np.where(excluded, np.inf, best)
    last = finite[-1]
    boundary = np.array([len(s) > 0 and s[-1] == last for s in sets])
    tag = out_tag or ("theta" if f.domain_tag == "x" else "x")
    fn = GridFunction(z, values, tag)
    return DualResult(fn, SubdiffMap(tuple(sets), f.grid, z), boundary, excluded)


def u_dual_monotone(
    f: GridFunction,
    u: Coupling,
    out_grid,
    orientation: str = INCREASING,
) -> tuple[GridFunction, np.ndarray]:
    """Divide-and-conquer dual exploiting monotone maximisers.

    Returns the dual and the smallest argmax index per output node.  Valid
    only under a strict single-crossing coupling; agrees with ``u_dual``.
    """
    if orientation not in (INCREASING, DECREASING):
        raise ValidationError("orientation must be increasing or decreasing")
    z = trap_nan(out_grid, "out_grid")
    finite = np.flatnonzero(f.finite_mask)
    if len(finite) == 0:
        raise EmptyEffectiveDomain("f is +inf at every node")
    y = f.grid[finite]
    fy = f.values[finite]
    nz = len(z)
    best = np.full(nz, -np.inf)
    arg = np.full(nz, -1, dtype=int)
    stack = [(0, nz - 1, 0, len(y) - 1)]
    while stack:
        zl, zr, yl, yr = stack.pop()
        if zl > zr:
            continue
        mid = (zl + zr) // 2
        with np.errstate(divide="ignore", invalid="ignore"):
            col = np.asarray(u.eval(y[yl : yr + 1], z[mid]), dtype=float) - fy[yl : yr + 1]
        col = np.broadcast_to(col, (yr - yl + 1,))
        k = int(np.argmax(col))
        best[mid] = col[k]
        arg[mid] = yl + k if np.isfinite(col[k]) else -1
        pivot = yl + k
        if orientation == INCREASING:
            stack.append((zl, mid - 1, yl, pivot))
            stack.append((mid + 1, zr, pivot, yr))
        else:
            stack.append((zl, mid - 1, pivot, yr))
            stack.append((mid + 1, zr, yl, pivot))
    values = np.where(best == -np.inf, np.inf, best)
    idx = np.where(arg >= 0, finite[np.maximum(arg, 0)], -1)
    tag = "theta" if f.domain_tag == "x" else "x"
    return GridFunction(z, values, tag), idx


def u_double_dual(f: GridFunction, u: Coupling, z_grid, *, tie_tol: float = DEFAULT_TOLERANCES.tie_tol) -> GridFunction:
    """(f^u)^u on f's own grid, using ``z_grid`` for the intermediate dual."""
    first = u_dual(f, u, z_grid, tie_tol=tie_tol).function
    second = u_dual(first, u.swap(), f.grid, tie_tol=tie_tol, out_tag=f.domain_tag).function
    return second


def is_u_convex(
    f: GridFunction,
    u: Coupling,
    z_grid,
    tol: float,
    *,
    mask: np.ndarray | None = None,
) -> tuple[bool, float]:
    """Compare f with its double dual over finite nodes (optionally masked)."""
    ff = u_double_dual(f, u, z_grid)
    sel = f.finite_mask & np.isfinite(ff.values)
    if mask is not None:
        sel &= np.asarray(mask, dtype=bool)
    if not sel.any():
        return True, 0.0
    dev = float(np.max(np.abs(f.values[sel] - ff.values[sel])))
    return dev <= tol, dev


def subdifferential(
    f: GridFunction,
    u: Coupling,
    out_grid,
    *,
    tol: float | None = None,
    open_right: bool = False,
    check: bool = True,
) -> SubdiffMap:
    """Pairs attaining Young's equality, indexed by ``out_grid`` nodes.

    With ``open_right`` an argmax set touching the last finite node is
    reported empty: the grid end stands in for an unattained supremum.
    """
    if check:
        if tol is None:
            lip = _lipschitz_estimate(f)
            tol = DEFAULT_TOLERANCES.dual_tolerance(f.grid, lip)
        ok, dev = is_u_convex(f, u, out_grid, tol)
        if not ok:
            raise NotUConvex(f"double dual deviates by {dev:.3g} > {tol:.3g}")
    res = u_dual(f, u, out_grid)
    sd = res.argmax
    if open_right:
        sd = sd.without(res.boundary)
    return sd


def _lipschitz_estimate(f: GridFunction) -> float:
    lo, hi = f.finite_range
    if hi - lo < 2:
        return 1.0
    slopes = np.diff(f.values[lo:hi]) / np.diff(f.grid[lo:hi])
    return float(max(1.0, np.max(np.abs(slopes))))


def check_monotone(sd: SubdiffMap, orientation: str) -> bool:
    """Representatives nondecreasing (increasing) or nonincreasing (decreasing)."""
    reps = sd.z_star[sd.nonempty]
    if len(reps) == 0:
        raise ValidationError("subdifferential is empty everywhere")
    d = np.diff(reps)
    if orientation == INCREASING:
        return bool(np.all(d >= 0))
    if orientation == DECREASING:
        return bool(np.all(d <= 0))
    raise ValidationError("orientation must be increasing or decreasing")


def refine_argmax(objective: Callable[[float], float], left: float, mid: float, right: float) -> float:
    """Golden-section search for a maximiser bracketed by neighbouring nodes."""
    from scipy.optimize import minimize_scalar

    fl, fm, fr = objective(left), objective(mid), objective(right)
    if not (fm >= fl and fm >= fr) or not (left < mid < right):
        return mid
    if fm == fl or fm == fr:
        return mid
    res = minimize_scalar(lambda t: -objective(t), bracket=(left, mid, right), method="golden")
    x = float(res.x)
    if not (left <= x <= right) or objective(x) < fm:
        return mid
    return x
