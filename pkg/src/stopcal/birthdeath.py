"""Birth-death chains calibrated from piecewise-linear call values.

For the call payoff (x - theta)^+ the dual of a decreasing convex
piecewise-linear value curve is again piecewise linear, so the whole
calibration is a finite recurrence.  Every function here accepts either
floats or ``fractions.Fraction`` inputs; with fractions the arithmetic is
exact end to end.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .diffusion import ABSORBING, Atom, Eigenfunction, SpeedMeasure
from .errors import CollidingStates, NonConvexInput, ValidationError
from .uconvex import GridFunction

ANCHOR_TOL = 1e-9


@dataclass(frozen=True)
class PiecewiseLinearValue:
    theta: tuple
    V: tuple

    def __post_init__(self):
        if len(self.theta) != len(self.V) or len(self.theta) < 3:
            raise ValidationError("need at least three (theta, V) breakpoints")
        if any(b <= a for a, b in zip(self.theta[:-1], self.theta[1:])):
            raise ValidationError("breakpoints must be strictly increasing")
        if any(v <= 0 for v in self.V):
            raise ValidationError("values must be positive")

    @property
    def slopes(self) -> list:
        t, v = self.theta, self.V
        return [(v[i + 1] - v[i]) / (t[i + 1] - t[i]) for i in range(len(t) - 1)]

    @classmethod
    def from_csv(cls, source, exact: bool = False) -> "PiecewiseLinearValue":
        text = Path(source).read_text() if "\n" not in str(source) else str(source)
        rows = [r for r in csv.reader(io.StringIO(text)) if r]
        if rows and not _numeric(rows[0][0]):
            rows = rows[1:]
        conv = Fraction if exact else float
        return cls(tuple(conv(r[0]) for r in rows), tuple(conv(r[1]) for r in rows))

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["theta", "V"])
        for t, v in zip(self.theta, self.V):
            w.writerow([str(t), str(v)])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def _numeric(s: str) -> bool:
    try:
        Fraction(s.strip())
        return True
    except ValueError:
        return False


@dataclass(frozen=True)
class BirthDeathChain:
    states: tuple
    p: tuple
    lam: tuple
    masses: tuple
    phi: tuple
    truncated: bool = True

    @property
    def total_mass(self):
        return sum(self.masses)

    def to_dict(self) -> dict:
        f = float
        return {
            "states": [f(x) for x in self.states],
            "p": [f(x) for x in self.p],
            "lambda": [f(x) for x in self.lam],
            "masses": [f(x) for x in self.masses],
            "phi": [f(x) for x in self.phi],
            "truncated": self.truncated,
            "total_mass": f(self.total_mass),
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    @classmethod
    def from_dict(cls, d: dict) -> "BirthDeathChain":
        return cls(
            tuple(d["states"]), tuple(d["p"]), tuple(d["lambda"]), tuple(d["masses"]),
            tuple(d["phi"]), bool(d.get("truncated", True)),
        )

    @classmethod
    def from_json(cls, source) -> "BirthDeathChain":
        text = Path(source).read_text() if not str(source).lstrip().startswith("{") else source
        return cls.from_dict(json.loads(text))

    def eigenfunction(self) -> Eigenfunction:
        """phi at the states, linear in between, closed at the last state."""
        x = np.array([float(s) for s in self.states])
        return Eigenfunction(GridFunction(x, np.array([float(v) for v in self.phi]), "x"), float(x[-1]))

    def to_speed_measure(self) -> SpeedMeasure:
        """String measure: zero density, atoms of half the difference-operator mass."""
        x = np.array([float(s) for s in self.states])
        atoms = tuple(Atom(float(xn), float(m) / 2.0) for xn, m in zip(x[1:], self.masses[1:]))
        density = GridFunction(x, np.zeros(len(x)), "x")
        return SpeedMeasure(density, atoms, float(x[-1]), ABSORBING, float(self.masses[0]) / 2.0)


def calibrate_bd(V: PiecewiseLinearValue, rho) -> BirthDeathChain:
    """States, jump probabilities, holding rates and masses from call values.

    N + 1 breakpoints give N slopes and N states; rates and masses need the
    next state, so the last state closes the chain.
    """
    if not rho > 0:
        raise ValidationError("rho must be positive")
    s = V.slopes
    if any(si >= 0 for si in s):
        raise NonConvexInput("value curve must be strictly decreasing")
    for i in range(len(s) - 1):
        if s[i + 1] < s[i]:
            raise NonConvexInput(f"slopes decrease between segments {i} and {i + 1}")
    theta, vals = V.theta, V.V
    if theta[0] >= 0:
        raise ValidationError("first breakpoint must be negative so that x_0 = 0")
    anchor = vals[0] / theta[0]
    exact = isinstance(s[0], Fraction)
    if (s[0] != anchor) if exact else abs(s[0] - anchor) > ANCHOR_TOL * abs(anchor):
        raise ValidationError(f"first slope {s[0]} does not anchor x_0 = 0 (needs V_0/theta_0 = {anchor})")
    x = [theta[n] - vals[n] / s[n] for n in range(len(s))]
    x[0] = x[0] * 0  # exactly zero, same number type
    for n in range(len(x) - 1):
        if x[n + 1] <= x[n]:
            raise CollidingStates(f"states {n} and {n + 1} collide at x = {x[n]}")
    phi = [-1 / sn for sn in s]
    one = phi[0] / phi[0]
    k = len(x) - 1
    p = [one]
    for n in range(1, k):
        p.append((x[n + 1] - x[n]) / (x[n + 1] - x[n - 1]))
    lam = []
    for n in range(k):
        below = (1 - p[n]) * phi[n - 1] if n > 0 else 0 * one
        denom = p[n] * phi[n + 1] + below - phi[n]
        if denom <= 0:
            raise NonConvexInput(f"non-positive curvature at state {n}")
        lam.append(rho * phi[n] / denom)
    masses = []
    up = one
    down = one
    for n in range(k):
        if n > 0:
            up = up * p[n - 1]
            down = down * (1 - p[n])
        masses.append(up / down / lam[n])
    return BirthDeathChain(tuple(x), tuple(p), tuple(lam), tuple(masses), tuple(phi), True)


def bd_residual(chain: BirthDeathChain, phi=None, rho=None) -> float:
    """Max residual of the second-order difference equation over states with a rate."""
    if rho is None:
        raise ValidationError("rho is required")
    f = chain.phi if phi is None else tuple(phi)
    x = chain.states
    worst = 0.0
    for n, m in enumerate(chain.masses):
        right = (f[n + 1] - f[n]) / (x[n + 1] - x[n])
        left = (f[n] - f[n - 1]) / (x[n] - x[n - 1]) if n > 0 else 0
        r = (right - left) / m - rho * f[n]
        worst = max(worst, abs(float(r)))
    return worst


def with_rate(chain: BirthDeathChain, n: int, factor: float) -> BirthDeathChain:
    """Copy with lambda_n scaled; masses follow the rate."""
    lam = list(chain.lam)
    masses = list(chain.masses)
    lam[n] = lam[n] * factor
    masses[n] = masses[n] / factor
    return BirthDeathChain(chain.states, chain.p, tuple(lam), tuple(masses), chain.phi, chain.truncated)
