"""Payoff families G(x, theta), their logs g = log G and cross-partial checks."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import MixedSign, UnknownFamily, ValidationError
from .uconvex import DECREASING, INCREASING, UNKNOWN, Coupling

X_CAP = 50.0
THETA_CAP = 50.0


@dataclass(frozen=True)
class Domain:
    lo: float
    hi: float
    lo_open: bool = False
    hi_open: bool = False

    def contains(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        ok_lo = t > self.lo if self.lo_open else t >= self.lo
        ok_hi = t < self.hi if self.hi_open else t <= self.hi
        return ok_lo & ok_hi

    def truncated(self, cap: float) -> tuple[float, float]:
        lo = self.lo if np.isfinite(self.lo) else -cap
        hi = self.hi if np.isfinite(self.hi) else cap
        return lo, hi

    def to_dict(self) -> dict:
        return {"lo": _enc(self.lo), "hi": _enc(self.hi), "lo_open": self.lo_open, "hi_open": self.hi_open}

    @classmethod
    def from_dict(cls, d: dict) -> "Domain":
        return cls(_dec(d["lo"]), _dec(d["hi"]), bool(d.get("lo_open", False)), bool(d.get("hi_open", False)))


def _enc(x: float):
    if x == np.inf:
        return "inf"
    if x == -np.inf:
        return "-inf"
    return float(x)


def _dec(x) -> float:
    return float(x)


@dataclass(frozen=True)
class PayoffFamily:
    name: str
    params: dict
    G: Callable
    g: Callable
    g_x: Callable
    g_theta: Callable
    g_xtheta: Callable
    x_domain: Domain
    theta_domain: Domain
    monotone_in_x: str
    sm_orientation: str
    numeric: bool = False
    extra: dict = field(default_factory=dict)

    def coupling(self) -> Coupling:
        """Coupling with y = x and z = theta."""
        return Coupling(
            eval=self.g,
            d_y=self.g_x,
            d_z=self.g_theta,
            d_yz=self.g_xtheta,
            y_domain=(self.x_domain.lo, self.x_domain.hi),
            z_domain=(self.theta_domain.lo, self.theta_domain.hi),
            sm_orientation=self.sm_orientation,
        )

    def descriptor(self) -> dict:
        return {
            "name": self.name,
            "params": self.params,
            "domains": {"x": self.x_domain.to_dict(), "theta": self.theta_domain.to_dict()},
        }


def _safe_log(a):
    a = np.asarray(a, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(a > 0, np.log(np.where(a > 0, a, 1.0)), -np.inf)


def _where_pos(mask, expr):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(mask, expr, np.nan)


def _linear(params):
    return dict(
        G=lambda x, t: np.exp(t * x),
        g=lambda x, t: t * x,
        g_x=lambda x, t: t + 0 * x,
        g_theta=lambda x, t: x + 0 * t,
        g_xtheta=lambda x, t: 1.0 + 0 * x * t,
        x_domain=Domain(0.0, np.inf),
        theta_domain=Domain(0.0, np.inf),
    )


def _power(params):
    def g(x, t):
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = t * np.log(np.where(x > 0, x, 1.0))
        return np.where(x > 0, out, np.where(t == 0, 0.0, -np.inf))

    return dict(
        G=lambda x, t: np.exp(g(x, t)),
        g=g,
        g_x=lambda x, t: _where_pos(np.asarray(x) > 0, t / np.asarray(x, dtype=float)),
        g_theta=lambda x, t: _where_pos(np.asarray(x) > 0, np.log(np.asarray(x, dtype=float)) + 0 * t),
        g_xtheta=lambda x, t: _where_pos(np.asarray(x) > 0, 1.0 / np.asarray(x, dtype=float) + 0 * t),
        x_domain=Domain(0.0, np.inf),
        theta_domain=Domain(0.0, np.inf),
    )


def _call(params):
    return dict(
        G=lambda x, t: np.maximum(np.asarray(x, dtype=float) - t, 0.0),
        g=lambda x, t: _safe_log(np.asarray(x, dtype=float) - t),
        g_x=lambda x, t: _where_pos(np.asarray(x) > t, 1.0 / (np.asarray(x, dtype=float) - t)),
        g_theta=lambda x, t: _where_pos(np.asarray(x) > t, -1.0 / (np.asarray(x, dtype=float) - t)),
        g_xtheta=lambda x, t: _where_pos(np.asarray(x) > t, 1.0 / (np.asarray(x, dtype=float) - t) ** 2),
        x_domain=Domain(0.0, np.inf),
        theta_domain=Domain(-np.inf, np.inf),
    )


def _put(params):
    return dict(
        G=lambda x, t: np.maximum(t - np.asarray(x, dtype=float), 0.0),
        g=lambda x, t: _safe_log(t - np.asarray(x, dtype=float)),
        g_x=lambda x, t: _where_pos(t > np.asarray(x), -1.0 / (t - np.asarray(x, dtype=float))),
        g_theta=lambda x, t: _where_pos(t > np.asarray(x), 1.0 / (t - np.asarray(x, dtype=float))),
        g_xtheta=lambda x, t: _where_pos(t > np.asarray(x), 1.0 / (t - np.asarray(x, dtype=float)) ** 2),
        x_domain=Domain(0.0, np.inf),
        theta_domain=Domain(0.0, np.inf),
    )


def _ratio(params):
    def G(x, t):
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        pos = (x > 0) & (t > 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(pos, t * x / np.where(pos, t + x, 1.0), 0.0)

    def cross(fn):
        def ev(x, t):
            x = np.asarray(x, dtype=float)
            return _where_pos((x > 0) & (np.asarray(t) > 0), fn(x, t))

        return ev

    return dict(
        G=G,
        g=lambda x, t: _safe_log(G(x, t)),
        g_x=cross(lambda x, t: 1.0 / x - 1.0 / (t + x)),
        g_theta=cross(lambda x, t: 1.0 / t - 1.0 / (t + x)),
        g_xtheta=cross(lambda x, t: 1.0 / (t + x) ** 2),
        x_domain=Domain(0.0, np.inf),
        theta_domain=Domain(0.0, np.inf, lo_open=True),
    )


def _tanh_additive(params):
    return dict(
        G=lambda x, t: np.exp(np.asarray(x, dtype=float) ** 2 + t * np.tanh(x)),
        g=lambda x, t: np.asarray(x, dtype=float) ** 2 + t * np.tanh(x),
        g_x=lambda x, t: 2 * np.asarray(x, dtype=float) + t / np.cosh(x) ** 2,
        g_theta=lambda x, t: np.tanh(x) + 0 * t,
        g_xtheta=lambda x, t: 1.0 / np.cosh(x) ** 2 + 0 * t,
        x_domain=Domain(0.0, np.inf),
        theta_domain=Domain(0.0, np.inf),
    )


def _concave(params):
    return dict(
        G=lambda x, t: np.exp(-(t**2) / (2 * (1 + np.asarray(x, dtype=float)))),
        g=lambda x, t: -(t**2) / (2 * (1 + np.asarray(x, dtype=float))),
        g_x=lambda x, t: t**2 / (2 * (1 + np.asarray(x, dtype=float)) ** 2),
        g_theta=lambda x, t: -t / (1 + np.asarray(x, dtype=float)),
        g_xtheta=lambda x, t: t / (1 + np.asarray(x, dtype=float)) ** 2,
        x_domain=Domain(0.0, np.inf),
        theta_domain=Domain(1.0, np.inf),
    )


_SEPARABLE_FUNCS = {
    # name: (value, derivative)
    "zero": (lambda s: 0 * s, lambda s: 0 * s),
    "one": (lambda s: 1 + 0 * s, lambda s: 0 * s),
    "identity": (lambda s: s, lambda s: 1 + 0 * s),
    "square": (lambda s: s**2, lambda s: 2 * s),
    "negate": (lambda s: -s, lambda s: -1 + 0 * s),
    "log1p": (lambda s: np.log1p(s), lambda s: 1 / (1 + s)),
    "tanh": (lambda s: np.tanh(s), lambda s: 1 / np.cosh(s) ** 2),
    "two_minus": (lambda s: 2 - s, lambda s: -1 + 0 * s),
}


def _separable(params):
    """g = h(x) + f(x) w(theta) with h, f, w chosen from a small registry."""
    try:
        h, dh = _SEPARABLE_FUNCS[params.get("h", "zero")]
        f, df = _SEPARABLE_FUNCS[params.get("f", "identity")]
        w, dw = _SEPARABLE_FUNCS[params.get("w", "identity")]
    except KeyError as exc:
        raise UnknownFamily(f"unknown separable component {exc.args[0]!r}") from None

    def g(x, t):
        x = np.asarray(x, dtype=float)
        return h(x) + f(x) * w(np.asarray(t, dtype=float))

    return dict(
        G=lambda x, t: np.exp(g(x, t)),
        g=g,
        g_x=lambda x, t: dh(np.asarray(x, dtype=float)) + df(np.asarray(x, dtype=float)) * w(np.asarray(t, dtype=float)),
        g_theta=lambda x, t: f(np.asarray(x, dtype=float)) * dw(np.asarray(t, dtype=float)),
        g_xtheta=lambda x, t: df(np.asarray(x, dtype=float)) * dw(np.asarray(t, dtype=float)),
        x_domain=Domain(0.0, np.inf),
        theta_domain=Domain(0.0, np.inf),
    )


_CATALOG = {
    "linear": _linear,
    "exp": _linear,
    "power": _power,
    "call": _call,
    "put": _put,
    "ratio": _ratio,
    "tanh-additive": _tanh_additive,
    "concave": _concave,
    "separable": _separable,
}


def catalog() -> list[str]:
    return sorted(_CATALOG)


def _domain_override(default: Domain, spec) -> Domain:
    if spec is None:
        return default
    if isinstance(spec, Domain):
        return spec
    if isinstance(spec, dict):
        return Domain.from_dict({**default.to_dict(), **spec})
    lo, hi = spec[:2]
    return Domain(float(lo), float(hi), default.lo_open, default.hi_open)


def builtin(name: str, params: dict | None = None, *, verify: bool = True) -> PayoffFamily:
    """Look up a catalog family and wire its analytic partials.

    ``params`` may carry ``x_domain`` / ``theta_domain`` overrides as
    ``[lo, hi]`` pairs or Domain dicts; the separable family also reads
    ``h``, ``f`` and ``w`` component names.
    """
    params = dict(params or {})
    if name not in _CATALOG:
        raise UnknownFamily(f"unknown payoff family {name!r}; known: {', '.join(catalog())}")
    parts = _CATALOG[name](params)
    x_dom = _domain_override(parts.pop("x_domain"), params.get("x_domain"))
    t_dom = _domain_override(parts.pop("theta_domain"), params.get("theta_domain"))
    fam = PayoffFamily(
        name=name,
        params={k: v for k, v in params.items() if k not in ("x_domain", "theta_domain")},
        x_domain=x_dom,
        theta_domain=t_dom,
        monotone_in_x="nondecreasing",
        sm_orientation=UNKNOWN,
        **parts,
    )
    if not verify:
        return fam
    report = verify_sm(fam)
    return _with(fam, sm_orientation=report.orientation, monotone_in_x=report.monotone_in_x)


def _with(fam: PayoffFamily, **changes) -> PayoffFamily:
    data = {k: getattr(fam, k) for k in fam.__dataclass_fields__}
    data.update(changes)
    return PayoffFamily(**data)


@dataclass(frozen=True)
class SMReport:
    min_g_xtheta: float
    max_g_xtheta: float
    orientation: str
    multiplicative_ok: bool
    monotone_in_x: str
    degenerate_theta: bool
    numeric: bool


def lattice(fam: PayoffFamily, n: int = 64, x_cap: float = X_CAP, theta_cap: float = THETA_CAP,
            x_range=None, theta_range=None) -> tuple[np.ndarray, np.ndarray]:
    """Interior verification lattice over the (truncated) domains."""
    xlo, xhi = x_range if x_range is not None else fam.x_domain.truncated(x_cap)
    tlo, thi = theta_range if theta_range is not None else fam.theta_domain.truncated(theta_cap)
    xs = _interior_points(xlo, xhi, n)
    ts = _interior_points(tlo, thi, n)
    return xs, ts


def _interior_points(lo: float, hi: float, n: int) -> np.ndarray:
    if hi <= lo:
        return np.array([lo])
    return lo + (hi - lo) * (np.arange(n) + 0.5) / n


def verify_sm(fam: PayoffFamily, n: int = 64, *, x_range=None, theta_range=None,
              x_cap: float = X_CAP, theta_cap: float = THETA_CAP) -> SMReport:
    """Sample g_xtheta on a lattice restricted to {G > 0}; raise MixedSign if it changes sign."""
    xs, ts = lattice(fam, n, x_cap, theta_cap, x_range, theta_range)
    X, T = np.meshgrid(xs, ts, indexing="ij")
    with np.errstate(all="ignore"):
        G = np.asarray(fam.G(X, T), dtype=float) * np.ones_like(X)
        pos = G > 0
        cross = np.asarray(fam.g_xtheta(X, T), dtype=float) * np.ones_like(X)
        gx = np.asarray(fam.g_x(X, T), dtype=float) * np.ones_like(X)
    sel = pos & np.isfinite(cross)
    if not sel.any():
        raise MixedSign("no lattice point with G > 0")
    c = cross[sel]
    lo, hi = float(c.min()), float(c.max())
    if lo > 0:
        orientation = INCREASING
    elif hi < 0:
        orientation = DECREASING
    else:
        raise MixedSign(f"g_xtheta takes values in [{lo:.3g}, {hi:.3g}]")
    # G G_xt - G_x G_t = G^2 g_xt on {G > 0}
    with np.errstate(over="ignore"):
        multiplicative_ok = bool(np.all(G[sel] ** 2 * c * (1 if orientation == INCREASING else -1) > 0))
    gxs = gx[sel & np.isfinite(gx)]
    if gxs.size and gxs.min() >= 0:
        mono = "nondecreasing"
    elif gxs.size and gxs.max() <= 0:
        mono = "nonincreasing"
    else:
        mono = "mixed"
    return SMReport(lo, hi, orientation, multiplicative_ok, mono, len(ts) == 1, fam.numeric)


def tabulated(name: str, x: np.ndarray, theta: np.ndarray, G: np.ndarray) -> PayoffFamily:
    """Family from a G table on a lattice; partials by finite differences."""
    x = np.asarray(x, dtype=float)
    theta = np.asarray(theta, dtype=float)
    G = np.asarray(G, dtype=float)
    if G.shape != (len(x), len(theta)):
        raise ValidationError("G table must have shape (len(x), len(theta))")
    if np.any(G < 0) or np.isnan(G).any():
        raise ValidationError("G must be nonnegative")
    if len(x) < 3 or len(theta) < 3:
        raise ValidationError("tabulated family needs at least 3 nodes per axis")
    from scipy.interpolate import RegularGridInterpolator

    with np.errstate(divide="ignore"):
        gtab = np.where(G > 0, np.log(np.where(G > 0, G, 1.0)), -np.inf)
    gfill = np.where(np.isfinite(gtab), gtab, np.nan)
    gx = np.gradient(gfill, x, axis=0)
    gt = np.gradient(gfill, theta, axis=1)
    gxt = np.gradient(gx, theta, axis=1)

    def interp(table):
        rgi = RegularGridInterpolator((x, theta), table, bounds_error=False, fill_value=np.nan)

        def ev(xq, tq):
            xq, tq = np.broadcast_arrays(np.asarray(xq, dtype=float), np.asarray(tq, dtype=float))
            pts = np.stack([xq.ravel(), tq.ravel()], axis=-1)
            return rgi(pts).reshape(xq.shape)

        return ev

    Gi = interp(G)

    def g(xq, tq):
        val = Gi(xq, tq)
        return _safe_log(np.nan_to_num(val, nan=0.0))

    fam = PayoffFamily(
        name=name,
        params={},
        G=Gi,
        g=g,
        g_x=interp(gx),
        g_theta=interp(gt),
        g_xtheta=interp(gxt),
        x_domain=Domain(float(x[0]), float(x[-1])),
        theta_domain=Domain(float(theta[0]), float(theta[-1])),
        monotone_in_x="nondecreasing",
        sm_orientation=UNKNOWN,
        numeric=True,
    )
    report = verify_sm(fam, x_range=(x[1], x[-2]), theta_range=(theta[1], theta[-2]))
    return _with(fam, sm_orientation=report.orientation, monotone_in_x=report.monotone_in_x)


def read_tabulated_csv(path, name: str = "tabulated") -> PayoffFamily:
    rows = list(csv.DictReader(io.StringIO(Path(path).read_text())))
    xs = sorted({float(r["x"]) for r in rows})
    ts = sorted({float(r["theta"]) for r in rows})
    xi = {v: i for i, v in enumerate(xs)}
    ti = {v: j for j, v in enumerate(ts)}
    table = np.full((len(xs), len(ts)), np.nan)
    for r in rows:
        table[xi[float(r["x"])], ti[float(r["theta"])]] = float(r["G"])
    if np.isnan(table).any():
        raise ValidationError("tabulated CSV does not fill a full lattice")
    return tabulated(name, np.array(xs), np.array(ts), table)


def from_descriptor(desc: dict | str) -> PayoffFamily:
    """Build a family from a JSON descriptor {name, params, domains}."""
    if isinstance(desc, str):
        desc = json.loads(desc)
    params = dict(desc.get("params") or {})
    domains = desc.get("domains") or {}
    if "x" in domains:
        params["x_domain"] = domains["x"]
    if "theta" in domains:
        params["theta_domain"] = domains["theta"]
    return builtin(desc["name"], params)


def theta_endpoint_limit(theta: np.ndarray, values: np.ndarray, side: str = "left", tol: float = 1e-6) -> float | None:
    """One-sided limit of a sampled curve at an open endpoint, or None if unsettled."""
    v = np.asarray(values, dtype=float)
    fin = np.isfinite(v)
    if fin.sum() < 3:
        return None
    tail = v[fin][:3] if side == "left" else v[fin][-3:]
    if np.ptp(tail) <= tol * max(1.0, float(np.max(np.abs(tail)))):
        return float(tail[0] if side == "left" else tail[-1])
    return None
