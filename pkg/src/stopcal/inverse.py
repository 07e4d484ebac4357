"""Inverse problem: sampled value curve -> existence verdict, eigenfunction, uniqueness.

The value curve ``v = log V`` lives on a theta grid (``+inf`` outside its
effective domain).  The natural candidate log-eigenfunction is the g-dual
``v^g(x) = max_theta [g(x, theta) - v(theta)]`` on a user x grid.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .conventions import DEFAULT_TOLERANCES, Tolerances, right_derivative3, left_derivative3
from .diffusion import Eigenfunction, SpeedMeasure, speed_from_eigen
from .errors import NotGConvex, ValidationError
from .forward import solve_forward
from .payoffs import PayoffFamily
from .uconvex import DECREASING, INCREASING, GridFunction, SubdiffMap, u_dual

CONSISTENT = "consistent"
INCONSISTENT = "inconsistent"

UNIQUE = "unique"
LEFT = "left_extension_family"
RIGHT = "right_extension_family"
GSECTION = "g_section_family"
MIXED = "mixed"
_PRECEDENCE = (GSECTION, LEFT, RIGHT)

CASE_ZERO = "x_minus_zero"
CASE_INTERIOR = "x_minus_interior"
CASE_INFINITE = "x_minus_infinite"

REASON_NONCONVEX = "e^{v^g} non-convex"
REASON_DECREASING = "e^{v^g} not increasing"
REASON_NOT_NORMALISED = "v^g(0) != 0"
REASON_NOT_POSITIVE = "v^g(x_-) <= 0"
REASON_ABOVE_CHORD = "v^g exceeds the chord on [0, x_-)"
REASON_HULL = "no convex majorant with vanishing gap"
REASON_REPRODUCE = "candidate does not reproduce v"

WITNESS_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class InverseReport:
    verdict: str
    reason: str | None
    case: str | None
    theta: np.ndarray
    v: GridFunction
    vg: GridFunction
    subdiff: SubdiffMap
    boundary: np.ndarray
    candidate_phi: Eigenfunction | None
    measure: SpeedMeasure | None
    x_minus: float
    x_plus: float
    x_R: float
    checks: dict
    exp_vg: np.ndarray | None = None
    uniqueness: str | None = None
    families: tuple = ()
    witnesses: tuple = ()
    witness_kinds: tuple = ()
    notes: dict = field(default_factory=dict)

    @property
    def consistent(self) -> bool:
        return self.verdict == CONSISTENT

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "reason": self.reason,
            "case": self.case,
            "x_minus": _enc(self.x_minus),
            "x_plus": _enc(self.x_plus),
            "x_R": _enc(self.x_R),
            "uniqueness": self.uniqueness,
            "families": list(self.families),
            "checks": {k: _jsonable(v) for k, v in sorted(self.checks.items())},
            "notes": {k: _jsonable(v) for k, v in sorted(self.notes.items())},
            "phi_csv": self.candidate_phi.to_csv() if self.candidate_phi is not None else None,
            "measure_json": self.measure.to_dict() if self.measure is not None else None,
            "witnesses": [
                {"kind": k, "phi_csv": w.to_csv()} for k, w in zip(self.witness_kinds, self.witnesses)
            ],
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text


def _enc(x):
    if x is None:
        return None
    x = float(x)
    if x == np.inf:
        return "inf"
    if x == -np.inf:
        return "-inf"
    if np.isnan(x):
        return None
    return x


def _jsonable(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return _enc(v)
    if isinstance(v, (list, tuple)):
        return [_jsonable(t) for t in v]
    if isinstance(v, dict):
        return {k: _jsonable(t) for k, t in v.items()}
    return v


def _refine_theta(v: GridFunction, factor: int) -> GridFunction:
    if factor <= 1:
        return v
    lo, hi = v.finite_range
    t = v.grid[lo:hi]
    if len(t) < 2:
        return v
    fine = np.concatenate([np.linspace(a, b, factor, endpoint=False) for a, b in zip(t[:-1], t[1:])] + [t[-1:]])
    vals = np.interp(fine, t, v.values[lo:hi])
    return GridFunction(fine, vals, "theta")


def candidate_psi(v: GridFunction, p: PayoffFamily, x_grid, *, theta_refine: int = 1) -> GridFunction:
    """v^g on the x grid; ``theta_refine`` > 1 interpolates v linearly between samples."""
    vv = _refine_theta(v, theta_refine)
    return u_dual(vv, p.coupling().swap(), np.asarray(x_grid, dtype=float), out_tag="x").function


def _convexity(x: np.ndarray, y: np.ndarray, tol: float, support: np.ndarray | None = None):
    """(nondecreasing, convex, hull) judged at the support nodes only.

    Off-support values are payoff sections between sampled parameters and
    carry no information about the eigenfunction.
    """
    if support is None:
        support = np.ones(len(x), dtype=bool)
    hull = _lower_hull_values(x, y) if len(x) >= 3 else y.copy()
    xs, ys = x[support], y[support]
    if len(xs) < 2:
        return True, True, hull
    scale = np.maximum(1.0, np.abs(ys))
    increasing = bool(np.all(np.diff(ys) >= -tol * scale[1:]))
    convex = bool(np.all(ys - hull[support] <= tol * scale))
    return increasing, convex, hull


def _lower_hull_values(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Greatest convex minorant of the points (x_i, y_i), evaluated at x."""
    hull: list[int] = []
    for i in range(len(x)):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            if (y[b] - y[a]) * (x[i] - x[a]) >= (y[i] - y[a]) * (x[b] - x[a]):
                hull.pop()
            else:
                break
        hull.append(i)
    return np.interp(x, x[hull], y[hull])


def _diverging(seq: np.ndarray, spacing: float, x_end: float) -> bool:
    """Representatives still growing without slowing down, or running into the grid end."""
    if len(seq) == 0:
        return False
    if seq[-1] >= x_end - 2 * spacing:
        return True
    m = max(2, len(seq) // 10)
    if len(seq) < 2 * m + 1:
        return False
    recent = float(seq[-1] - seq[-1 - m])
    earlier = float(seq[-1 - m] - seq[-1 - 2 * m])
    return recent > spacing and recent >= 0.9 * earlier


def _ordered(theta_idx: np.ndarray, orientation: str) -> np.ndarray:
    return theta_idx if orientation == INCREASING else theta_idx[::-1]


def _range_endpoints(sd: SubdiffMap, boundary: np.ndarray, order: np.ndarray, x: np.ndarray):
    nonempty = sd.nonempty[order]
    valid = nonempty & ~boundary[order]
    lowers = sd.lower[order]
    uppers = sd.upper[order]
    spacing = float(np.max(np.diff(x)))
    x_end = float(x[-1])
    if not valid.any():
        return np.inf, np.inf, np.inf, valid
    first_valid = int(np.argmax(valid))
    x_minus = float(uppers[first_valid])
    # x_+ from the lower hull endpoint at the far end
    if nonempty[-1] and lowers[-1] < x[-1]:
        x_plus = float(lowers[-1])
    else:
        x_plus = np.inf
    seq = lowers[valid]
    if _diverging(seq, spacing, x_end):
        x_plus = np.inf
    # x_R: limit along the first run of attained nodes
    run_end = first_valid
    while run_end + 1 < len(valid) and valid[run_end + 1]:
        run_end += 1
    run = lowers[first_valid : run_end + 1]
    if run_end == len(valid) - 1:
        x_R = x_plus
    else:
        x_R = np.inf if _diverging(run, spacing, x_end) else float(run[-1])
        if not np.isfinite(x_plus):
            x_R = np.inf if _diverging(run, spacing, x_end) or run_end >= len(valid) - 2 else x_R
    return x_minus, x_plus, x_R, valid


def _normalised_phi(x: np.ndarray, phi_vals: np.ndarray) -> Eigenfunction:
    vals = phi_vals / phi_vals[0]
    return Eigenfunction(GridFunction(x, vals, "x"), np.inf if np.all(np.isfinite(vals)) else float(x[np.isfinite(vals)][-1]))


def check_existence(
    v: GridFunction,
    p: PayoffFamily,
    rho: float,
    x_grid,
    *,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
    theta_refine: int = 1,
) -> InverseReport:
    """Existence verdict via the three sufficient cases keyed on x_-."""
    if not rho > 0:
        raise ValidationError("rho must be positive")
    if p.sm_orientation not in (INCREASING, DECREASING):
        raise ValidationError("payoff family failed Spence-Mirrlees verification")
    x = np.asarray(x_grid, dtype=float)
    if x[0] != 0.0:
        raise ValidationError("x grid must start at 0")
    vv = _refine_theta(v, theta_refine)
    first = u_dual(vv, p.coupling().swap(), x, out_tag="x")
    vg = first.function
    # every payoff section is -inf there, so e^{v^g} = 0
    zero_phi = first.excluded
    theta = vv.grid
    second = u_dual(vg, p.coupling(), theta, out_tag="theta")
    fin_t = vv.finite_mask
    lo_x, hi_x = vg.finite_range
    at_end = second.argmax.top_index == hi_x - 1
    cmp = fin_t & ~at_end & np.isfinite(second.values)
    lip = _lipschitz(vg)
    dual_tol = tolerances.dual_tolerance(x, lip)
    dev = float(np.max(np.abs(vv.values[cmp] - second.values[cmp]))) if cmp.any() else 0.0
    checks: dict = {"g_convex_deviation": dev, "g_convex_tol": dual_tol}
    if dev > dual_tol:
        raise NotGConvex(f"v differs from its double dual by {dev:.3g} > {dual_tol:.3g}")
    sd = second.argmax
    boundary = at_end | second.excluded
    order = _ordered(np.flatnonzero(fin_t), p.sm_orientation)
    x_minus, x_plus, x_R, valid = _range_endpoints(sd, boundary, order, x)
    h0 = x[1] - x[0]
    starts_at_zero = bool(valid.any()) and sd.lower[order][int(np.argmax(valid))] == x[0]
    if starts_at_zero and not zero_phi[0] and abs(vg.values[0]) <= dual_tol:
        x_minus = 0.0
    if x_minus <= 1.5 * h0:
        case = CASE_ZERO
        x_minus = 0.0
    elif np.isfinite(x_minus):
        case = CASE_INTERIOR
    else:
        case = CASE_INFINITE
    base = dict(theta=theta, v=vv, vg=vg, exp_vg=None, subdiff=sd, boundary=boundary,
                x_minus=x_minus, x_plus=x_plus, x_R=x_R, case=case)
    attained = sd.nonempty & ~boundary & fin_t
    fin_x = np.isfinite(vg.values)
    with np.errstate(over="ignore"):
        ephi = np.where(fin_x, np.exp(np.where(fin_x, vg.values, 0.0)), np.inf)
    ephi[zero_phi] = 0.0
    fin_x = fin_x | zero_phi
    base["exp_vg"] = ephi
    # noise floor: the g-convexity defect plus the concavity of single payoff
    # sections across the x interval each sampled parameter owns
    sampling = _section_defect(x, ephi, sd, attained)
    conv_tol = max(tolerances.convexity_tol, 10.0 * dev, 2.0 * sampling)
    checks["convexity_tol"] = conv_tol
    support = np.zeros(len(x), dtype=bool)
    support[np.searchsorted(x, sd.lower[attained])] = True
    support[np.searchsorted(x, sd.upper[attained])] = True
    notes: dict = {}

    def fail(reason: str) -> InverseReport:
        return InverseReport(INCONSISTENT, reason, candidate_phi=None, measure=None, checks=checks, notes=notes, **base)

    span_hi = x_plus if np.isfinite(x_plus) else x[hi_x - 1]
    phi_vals = None
    if case == CASE_ZERO:
        if zero_phi[0] and len(x) > 2 and np.all(ephi[1:3] > 0) and np.all(np.isfinite(ephi[1:3])):
            # every payoff vanishes at 0; use the right limit there
            ephi[0] = ephi[1] - (ephi[2] - ephi[1]) * (x[1] - x[0]) / (x[2] - x[1])
            notes["right_limit_at_zero"] = True
        v0 = float(np.log(ephi[0])) if ephi[0] > 0 else -np.inf
        checks["v_g_at_zero"] = v0
        checks["normalised"] = bool(np.isfinite(v0) and abs(v0) <= dual_tol)
        sel = (x <= span_hi + 1e-12) & fin_x
        sup = support[sel]
        sup[0] = True
        inc, cvx, hull = _convexity(x[sel], ephi[sel], conv_tol, sup)
        checks["increasing_on_range"] = inc
        checks["convex_on_range"] = cvx
        if not cvx:
            return fail(REASON_NONCONVEX)
        if not inc:
            return fail(REASON_DECREASING)
        if not checks["normalised"]:
            return fail(REASON_NOT_NORMALISED)
        phi_vals = ephi.copy()
        phi_vals[sel] = hull
    elif case == CASE_INTERIOR:
        i_m = int(np.searchsorted(x, x_minus))
        y_m = float(ephi[i_m])
        checks["v_g_at_x_minus_positive"] = bool(y_m > 1.0)
        sel = (x >= x_minus - 1e-12) & (x <= span_hi + 1e-12) & fin_x
        inc, cvx, hull = _convexity(x[sel], ephi[sel], conv_tol, support[sel])
        checks["increasing_on_range"] = inc
        checks["convex_on_range"] = cvx
        chord = 1.0 + x * (y_m - 1.0) / x_minus
        left = x < x_minus
        below = bool(np.all(ephi[left] <= chord[left] * (1 + conv_tol) + 1e-12))
        checks["below_chord"] = below
        if not checks["v_g_at_x_minus_positive"]:
            return fail(REASON_NOT_POSITIVE)
        if not cvx:
            return fail(REASON_NONCONVEX)
        if not inc:
            return fail(REASON_DECREASING)
        if not below:
            return fail(REASON_ABOVE_CHORD)
        phi_vals = np.where(left, chord, ephi)
        phi_vals[sel] = hull
        notes["chord_slope"] = (y_m - 1.0) / x_minus
    else:
        pos = fin_x & (x > 0)
        px = np.concatenate([[0.0], x[pos]])
        py = np.concatenate([[1.0], ephi[pos]])
        hull = _lower_hull_values(px, py)
        sup = support[pos]
        gap = (py[1:] - hull[1:])[sup]
        ok = bool(np.all(gap <= conv_tol * np.maximum(1.0, np.abs(py[1:][sup])))) and bool(np.all(np.diff(hull) >= 0))
        checks["hull_dominates"] = ok
        notes["construction"] = "convex_hull_construction"
        if not ok:
            return fail(REASON_HULL)
        phi_vals = np.full(len(x), np.inf)
        phi_vals[0] = 1.0
        phi_vals[pos] = hull[1:]
    settled = True
    if np.isfinite(x_plus):
        settled = _right_slope_settled(p, theta[order[valid]], x_plus)
        checks["right_slope_settled"] = settled
    # beyond x_+ keep e^{v^g} only while it stays convex, else close the state space
    if np.isfinite(x_plus) and case != CASE_INFINITE:
        beyond = (x > x_plus) & np.isfinite(phi_vals)
        if beyond.any() and not settled:
            phi_vals = np.where(beyond, np.inf, phi_vals)
        elif beyond.any():
            sel = (x >= x_plus - 1e-12) & np.isfinite(phi_vals)
            inc_b, cvx_b, _ = _convexity(x[sel], phi_vals[sel], tolerances.convexity_tol)
            checks["convex_beyond_x_plus"] = bool(inc_b and cvx_b)
            if not (inc_b and cvx_b):
                phi_vals = np.where(beyond, np.inf, phi_vals)
    cand = _normalised_phi(x, phi_vals)
    sol = solve_forward(cand, p, rho, theta)
    fit = fin_t & np.isfinite(sol.v) & ~at_end
    err = float(np.max(np.abs(sol.v[fit] - vv.values[fit]))) if fit.any() else 0.0
    checks["reproduction_error"] = err
    if err > 5 * dual_tol:
        return fail(REASON_REPRODUCE)
    try:
        measure = speed_from_eigen(cand, rho, kink_factor=tolerances.kink_factor)
    except Exception as exc:  # noqa: BLE001
        notes["measure_error"] = str(exc)
        measure = None
    return InverseReport(CONSISTENT, None, candidate_phi=cand, measure=measure, checks=checks, notes=notes, **base)


def _right_slope_settled(p: PayoffFamily, theta_valid: np.ndarray, x_plus: float, rel: float = 1e-3) -> bool:
    """Whether g_x(x_+, theta) has stopped moving over the last tenth of the samples.

    Beyond x_+ the dual follows the last sampled section, so its right slope is
    only meaningful if that slope is insensitive to where the samples stop.
    """
    n = len(theta_valid)
    if n < 2:
        return True
    m = max(1, n // 10)
    with np.errstate(all="ignore"):
        s1 = float(np.asarray(p.g_x(np.array([x_plus]), theta_valid[-1])).ravel()[0])
        s0 = float(np.asarray(p.g_x(np.array([x_plus]), theta_valid[-1 - m])).ravel()[0])
    if not (np.isfinite(s0) and np.isfinite(s1)):
        return False
    return abs(s1 - s0) <= rel * max(1.0, abs(s1))


def _section_defect(x: np.ndarray, y: np.ndarray, sd: SubdiffMap, attained: np.ndarray) -> float:
    worst = 0.0
    ia = np.searchsorted(x, sd.lower[attained])
    ib = np.searchsorted(x, sd.upper[attained])
    for a, b in zip(ia, ib):
        if b - a < 2 or not np.all(np.isfinite(y[a : b + 1])):
            continue
        seg = y[a : b + 1]
        chord = seg[0] + (seg[-1] - seg[0]) * (x[a : b + 1] - x[a]) / (x[b] - x[a])
        worst = max(worst, float(np.max((seg - chord) / np.maximum(1.0, np.abs(seg)))))
    return worst


def _lipschitz(f: GridFunction) -> float:
    lo, hi = f.finite_range
    if hi - lo < 2:
        return 1.0
    s = np.diff(f.values[lo:hi]) / np.diff(f.grid[lo:hi])
    return float(max(1.0, np.median(np.abs(s))))


def _witness_distinct(a: np.ndarray, b: np.ndarray) -> bool:
    if np.any(np.isfinite(a) != np.isfinite(b)):
        return True
    fin = np.isfinite(a) & np.isfinite(b)
    if not fin.any():
        return False
    rel = np.abs(a[fin] - b[fin]) / np.maximum(1.0, np.abs(b[fin]))
    return float(np.max(rel)) > 10 * WITNESS_TOL


def _bezier_between(x: np.ndarray, x_m: float, y_m: float, s_end: float, n: int = 4001) -> np.ndarray:
    """Quadratic Bezier from (0, 1) with zero slope to (x_m, y_m) with slope s_end."""
    xc = x_m - (y_m - 1.0) / s_end
    t = np.linspace(0.0, 1.0, n)
    bx = 2 * t * (1 - t) * xc + t**2 * x_m
    by = (1 - t) ** 2 + 2 * t * (1 - t) * 1.0 + t**2 * y_m
    return np.interp(x, bx, by)


def _continuity(report: InverseReport, kink_factor: float):
    """Discontinuities of x*: set widths or gaps far larger than their neighbours."""
    sd = report.subdiff
    x = report.vg.grid
    order = np.flatnonzero(report.v.finite_mask)
    valid = sd.nonempty[order] & ~report.boundary[order]
    idx = order[valid]
    if len(idx) < 2:
        return []
    # pieces outside [x_-, x_R] belong to the endpoint analysis
    hi = report.x_R if np.isfinite(report.x_R) else np.inf
    lowers = np.clip(sd.lower[idx], report.x_minus, hi)
    uppers = np.clip(sd.upper[idx], report.x_minus, hi)
    if lowers[-1] < lowers[0]:
        idx, lowers, uppers = idx[::-1], lowers[::-1], uppers[::-1]
    spacing = float(np.max(np.diff(x)))
    advance = np.append(np.diff(lowers), 0.0)
    found = []
    for k in range(len(idx)):
        lo = max(0, k - 4)
        neigh = np.concatenate([advance[lo:k], advance[k + 1 : k + 5]])
        ref = float(np.median(neigh)) if len(neigh) else 0.0
        limit = max(2 * spacing, kink_factor * ref)
        # sets at the extreme parameters belong to the x_- / x_+ analysis
        if 0 < k < len(idx) - 1 and uppers[k] - lowers[k] > limit:
            found.append((int(idx[k]), float(lowers[k]), float(uppers[k])))
        if k + 1 < len(idx) and lowers[k + 1] - uppers[k] > limit:
            found.append((int(idx[k]), float(uppers[k]), float(lowers[k + 1])))
    return found


def _estimate_kappa(x: np.ndarray, ephi: np.ndarray):
    fin = np.isfinite(ephi) & (x > 0)
    xs, ys = x[fin], ephi[fin]
    if len(xs) < 8:
        return None, "too few nodes"
    X = xs[-1]

    def r(at):
        j = int(np.searchsorted(xs, at))
        j = min(max(j, 0), len(xs) - 1)
        return ys[j] / xs[j]

    r1, r2, r4 = r(X), r(X / 2), r(X / 4)
    k1 = 2 * r1 - r2
    k2 = 2 * r2 - r4
    if abs(k1 - k2) <= 1e-3 * max(1.0, abs(k1)):
        return float(k1), "converged"
    if r1 > r2 > r4 and k1 > 1.5 * k2 > 0:
        return np.inf, "diverging"
    return None, "inconclusive"


def diagnose_uniqueness(
    report: InverseReport,
    v: GridFunction | None = None,
    p: PayoffFamily | None = None,
    rho: float | None = None,
    *,
    tolerances: Tolerances = DEFAULT_TOLERANCES,
) -> InverseReport:
    """Classify uniqueness and attach constructive witnesses."""
    if not report.consistent:
        raise ValidationError("uniqueness is only diagnosed for consistent reports")
    x = report.vg.grid
    phi = report.candidate_phi.phi.values
    ephi = report.exp_vg
    fin = np.isfinite(ephi)
    families: list[str] = []
    witnesses: list[Eigenfunction] = []
    kinds: list[str] = []
    notes = dict(report.notes)
    checks = dict(report.checks)
    mixed = False

    def add(kind: str, vals: np.ndarray):
        if _witness_distinct(vals, phi):
            witnesses.append(_normalised_phi(x, vals))
            kinds.append(kind)
            return True
        return False

    # g-sections
    sections = _continuity(report, tolerances.kink_factor)
    checks["x_star_continuous"] = not sections
    for _, a, b in sections:
        sel = (x >= a - 1e-12) & (x <= b + 1e-12) & np.isfinite(phi)
        if sel.sum() < 2:
            continue
        ia, ib = np.flatnonzero(sel)[[0, -1]]
        w = phi.copy()
        w[ia : ib + 1] = phi[ia] + (phi[ib] - phi[ia]) * (x[ia : ib + 1] - x[ia]) / (x[ib] - x[ia])
        if add(GSECTION, w) and GSECTION not in families:
            families.append(GSECTION)
            notes.setdefault("g_sections", []).append([a, b])
    # left side
    if report.case == CASE_INTERIOR:
        xm = report.x_minus
        i_m = int(np.searchsorted(x, xm))
        y_m = float(ephi[i_m])
        slope_chord = (y_m - 1.0) / xm
        inner = (x > 0) & (x < xm)
        chord = 1.0 + x * slope_chord
        scale = max(1.0, y_m)
        touch = bool(np.any(chord[inner] - ephi[inner] <= WITNESS_TOL * scale)) if inner.any() else True
        d_plus = right_derivative3(x, ephi, i_m)
        slope_equal = abs(d_plus - slope_chord) <= 1e-3 * max(1.0, abs(slope_chord))
        checks["left_touches_chord"] = touch
        checks["left_slope_matches_chord"] = slope_equal
        if not touch and not slope_equal and d_plus > slope_chord:
            d_minus = left_derivative3(x, ephi, i_m) if i_m >= 1 else d_plus
            s_end = min(max(d_minus, slope_chord * (1 + 1e-6)), d_plus)
            s_end = max(s_end, 0.5 * (slope_chord + d_plus)) if s_end <= slope_chord else s_end
            w = phi.copy()
            left = x < xm
            bez = _bezier_between(x[left], xm, y_m, s_end)
            for t in np.linspace(0.0, 0.9, 10):
                cand = (1 - t) * bez + t * chord[left]
                if np.all(cand >= ephi[left] - WITNESS_TOL * scale):
                    w[left] = cand
                    break
            if add(LEFT, w):
                families.append(LEFT)
    elif report.case == CASE_INFINITE:
        kappa, status = _estimate_kappa(x, ephi)
        notes["kappa"] = kappa if kappa is not None else None
        notes["kappa_status"] = status
        if kappa is None:
            mixed = True
        elif kappa == np.inf:
            if add(LEFT, phi + x):
                families.append(LEFT)
        else:
            line = 1.0 + kappa * x
            pos = (x > 0) & np.isfinite(ephi)
            touch = bool(np.any(np.abs(line[pos] - ephi[pos]) <= WITNESS_TOL * np.maximum(1.0, line[pos])))
            tail_gap = float(line[pos][-1] - ephi[pos][-1])
            if not touch and tail_gap > WITNESS_TOL * max(1.0, line[pos][-1]):
                if add(LEFT, 0.5 * (phi + line)):
                    families.append(LEFT)
    # right side
    xr = report.x_R
    if np.isfinite(xr):
        i_r = int(np.searchsorted(x, xr))
        finite_right = i_r + 1 < len(x) and bool(np.all(np.isfinite(ephi[i_r : i_r + 2])))
        finite_right = finite_right and checks.get("right_slope_settled", True)
        checks["right_extension_condition"] = bool(finite_right)
        if finite_right:
            base = phi.copy()
            beyond = x > xr
            if not np.all(np.isfinite(base[beyond])):
                d = left_derivative3(x, phi, i_r)
                base = np.where(beyond, phi[i_r] + d * (x - xr), phi)
            a = max(1.0, float(phi[i_r]))
            for _ in range(60):
                w = np.where(beyond, base + a * (x - xr) ** 2, base)
                if np.all(w[beyond & fin] >= ephi[beyond & fin] * (1 - 1e-9)):
                    break
                a *= 2
            ok1 = add(RIGHT, w)
            ok2 = add(RIGHT, np.where(beyond, w + a * (x - xr), w))
            if ok1 or ok2:
                families.append(RIGHT)
    else:
        checks["right_extension_condition"] = False
    if mixed:
        uniqueness = MIXED
    elif families:
        uniqueness = next(f for f in _PRECEDENCE if f in families)
    elif report.case == CASE_ZERO and not np.isfinite(report.x_R) and checks["x_star_continuous"]:
        uniqueness = UNIQUE
    elif report.case in (CASE_INTERIOR, CASE_INFINITE) and not np.isfinite(report.x_R) and checks["x_star_continuous"]:
        uniqueness = UNIQUE
    else:
        uniqueness = UNIQUE if not families else families[0]
    ordered = tuple(f for f in _PRECEDENCE if f in families)
    return replace(report, uniqueness=uniqueness, families=ordered, witnesses=tuple(witnesses),
                   witness_kinds=tuple(kinds), notes=notes, checks=checks)


@dataclass(frozen=True, eq=False)
class RecoveredMeasures:
    candidate: SpeedMeasure
    witnesses: tuple


def recover_measure(report: InverseReport, rho: float, *, tolerances: Tolerances = DEFAULT_TOLERANCES) -> RecoveredMeasures:
    """Speed measures of the candidate and of every witness."""
    if not report.consistent:
        raise ValidationError("no measure for an inconsistent report")
    cand = speed_from_eigen(report.candidate_phi, rho, kink_factor=tolerances.kink_factor)
    wit = tuple(speed_from_eigen(w, rho, kink_factor=tolerances.kink_factor) for w in report.witnesses)
    return RecoveredMeasures(cand, wit)


def solve_inverse(v: GridFunction, p: PayoffFamily, rho: float, x_grid, **kw) -> InverseReport:
    """check_existence followed by diagnose_uniqueness when consistent."""
    rep = check_existence(v, p, rho, x_grid, **kw)
    if rep.consistent:
        tol = kw.get("tolerances", DEFAULT_TOLERANCES)
        rep = diagnose_uniqueness(rep, v, p, rho, tolerances=tol)
    return rep
