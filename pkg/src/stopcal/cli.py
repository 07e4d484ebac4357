"""Command-line front end.

Exit codes: 0 success, 1 solver-reported inconsistency (JSON reason on
stdout), 2 invalid input or configuration.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .birthdeath import PiecewiseLinearValue, calibrate_bd
from .conventions import Tolerances
from .diffusion import Eigenfunction, SpeedMeasure, stock_vol_from_eigen
from .errors import StopcalError
from .forward import solve_forward
from .golden import run_all
from .inverse import solve_inverse
from .mc import SimConfig, estimate_laplace
from .payoffs import builtin, from_descriptor
from .uconvex import GridFunction

EXIT_OK, EXIT_INCONSISTENT, EXIT_INVALID = 0, 1, 2


class ConfigError(StopcalError, ValueError):
    pass


@dataclass
class RunConfig:
    mode: str
    rho: float | None = None
    delta: float | None = None
    x_grid: tuple | None = None
    theta_grid: tuple | None = None
    tolerances: dict = field(default_factory=dict)
    payoff: dict | None = None
    extra: dict = field(default_factory=dict)

    def validate(self, need_rho: bool = True) -> None:
        if need_rho and (self.rho is None or not self.rho > 0):
            raise ConfigError("--rho is required and must be positive")
        for name in ("x_grid", "theta_grid"):
            g = getattr(self, name)
            if g is not None:
                lo, hi, step = g
                if not (step > 0 and hi > lo):
                    raise ConfigError(f"{name} must satisfy max > min and step > 0")
        Tolerances(**self.tolerances)

    def tol(self) -> Tolerances:
        return Tolerances(**self.tolerances)


def parse_grid(text) -> tuple:
    if isinstance(text, (list, tuple)):
        vals = [float(v) for v in text]
    else:
        vals = [float(v) for v in str(text).split(":")]
    if len(vals) != 3:
        raise ConfigError(f"grid must be min:max:step, got {text!r}")
    return tuple(vals)


def grid_points(g: tuple) -> np.ndarray:
    lo, hi, step = g
    n = int(round((hi - lo) / step))
    return np.round(lo + step * np.arange(n + 1), 12)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True)


def _payoff(cfg: RunConfig):
    if cfg.payoff is None:
        raise ConfigError("--payoff is required")
    return from_descriptor(cfg.payoff)


def _load_x(args, cfg: RunConfig, rho: float):
    measure = args.measure or cfg.extra.get("measure")
    phi = getattr(args, "phi", None) or cfg.extra.get("phi")
    if measure:
        return SpeedMeasure.from_json(measure)
    if phi:
        return Eigenfunction.from_csv(phi)
    raise ConfigError("one of --measure or --phi is required")


def _read_values(path) -> GridFunction:
    V = GridFunction.from_csv(path, "theta")
    with np.errstate(divide="ignore"):
        return V.with_values(np.log(V.values))


def cmd_forward(args, cfg: RunConfig) -> int:
    cfg.validate()
    if cfg.theta_grid is None:
        raise ConfigError("--theta-grid is required")
    X = _load_x(args, cfg, cfg.rho)
    sol = solve_forward(X, _payoff(cfg), cfg.rho, grid_points(cfg.theta_grid), tie_tol=cfg.tol().tie_tol)
    if args.out:
        sol.to_csv(args.out)
    print(_dump({
        "theta_R": _enc(sol.theta_R),
        "theta_L": _enc(sol.theta_L),
        "orientation": sol.orientation,
        "empty_contiguous": sol.empty_contiguous,
        "nodes": int(len(sol.theta)),
    }))
    return EXIT_OK


def cmd_inverse(args, cfg: RunConfig) -> int:
    cfg.validate()
    values = args.values or cfg.extra.get("values")
    if not values:
        raise ConfigError("--values is required")
    v = _read_values(values)
    x = grid_points(cfg.x_grid or (0.0, 10.0, 0.01))
    rep = solve_inverse(v, _payoff(cfg), cfg.rho, x, tolerances=cfg.tol(),
                        theta_refine=int(cfg.extra.get("theta_refine", 1)))
    text = rep.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
    if args.curves:
        _write_curves(args.curves, rep)
    if not rep.consistent:
        print(_dump({"verdict": rep.verdict, "reason": rep.reason}))
        return EXIT_INCONSISTENT
    print(_dump({"verdict": rep.verdict, "uniqueness": rep.uniqueness, "families": list(rep.families),
                 "x_minus": _enc(rep.x_minus), "x_plus": _enc(rep.x_plus), "x_R": _enc(rep.x_R)}))
    return EXIT_OK


def _write_curves(path, rep) -> None:
    """Tidy CSV: curve,coord,value for v, v^g, phi and x*."""
    lines = ["curve,coord,value"]

    def add(name, xs, ys):
        for a, b in zip(xs, ys):
            if np.isnan(b):
                continue
            lines.append(f"{name},{float(a)!r},{'inf' if b == np.inf else repr(float(b))}")

    add("v", rep.theta, rep.v.values)
    add("v_g", rep.vg.grid, rep.vg.values)
    if rep.candidate_phi is not None:
        add("phi", rep.candidate_phi.grid, rep.candidate_phi.phi.values)
    add("x_star", rep.theta, rep.subdiff.representatives())
    Path(path).write_text("\n".join(lines) + "\n")


def cmd_birthdeath(args, cfg: RunConfig) -> int:
    cfg.validate()
    values = args.values or cfg.extra.get("values")
    if not values:
        raise ConfigError("--values is required")
    exact = bool(args.exact or cfg.extra.get("exact", False))
    V = PiecewiseLinearValue.from_csv(values, exact=exact)
    rho = cfg.rho
    if exact:
        from fractions import Fraction

        rho = Fraction(str(cfg.rho))
    chain = calibrate_bd(V, rho)
    text = chain.to_json()
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)
    return EXIT_OK


def cmd_verify(args, cfg: RunConfig) -> int:
    cfg.validate()
    measure = args.measure or cfg.extra.get("measure")
    if not measure:
        raise ConfigError("--measure is required")
    x = args.x if args.x is not None else cfg.extra.get("x")
    if x is None:
        raise ConfigError("--x is required")
    sim = SimConfig(
        seed=int(_pick(args.seed, cfg.extra.get("seed"), 0)),
        paths=int(_pick(args.paths, cfg.extra.get("paths"), 10_000)),
        dt=float(_pick(args.dt, cfg.extra.get("dt"), 1e-4)),
        shards=int(_pick(args.shards, cfg.extra.get("shards"), 8)),
        bridge=bool(args.bridge or cfg.extra.get("bridge", False)),
    )
    m = SpeedMeasure.from_json(measure)
    est = estimate_laplace(m, cfg.rho, float(x), sim)
    print(est.to_json())
    return EXIT_OK


def cmd_stockvol(args, cfg: RunConfig) -> int:
    cfg.validate()
    if cfg.delta is None:
        raise ConfigError("--delta is required")
    phi_path = args.phi or cfg.extra.get("phi")
    if not phi_path:
        raise ConfigError("--phi is required")
    phi = GridFunction.from_csv(phi_path, "x")
    curve = stock_vol_from_eigen(phi, cfg.rho, cfg.delta)
    lines = ["x,eta"] + [f"{float(a)!r},{'' if np.isnan(b) else repr(float(b))}" for a, b in zip(curve.x, curve.eta)]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_examples(args, cfg: RunConfig) -> int:
    rows = run_all(include_mc=not args.no_mc)
    width = max(len(r.name) for r in rows)
    for r in rows:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status}  {r.name:<{width}}  measured={r.measured:.6g}  {r.detail}")
    return EXIT_OK if all(r.passed for r in rows) else EXIT_INCONSISTENT


def _pick(*vals):
    for v in vals:
        if v is not None:
            return v
    return None


def _enc(x):
    x = float(x)
    if np.isinf(x):
        return "inf" if x > 0 else "-inf"
    return x


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stopcal", description="Optimal-stopping calibration of generalised diffusions.")
    sub = parser.add_subparsers(dest="mode", required=True)

    def common(p, rho=True):
        p.add_argument("--config", help="JSON config file; flags override it")
        if rho:
            p.add_argument("--rho", type=float)
        p.add_argument("--convexity-tol", type=float)
        p.add_argument("--tie-tol", type=float)
        p.add_argument("--kink-factor", type=float)
        return p

    p = common(sub.add_parser("forward", help="value curve from a speed measure or eigenfunction"))
    p.add_argument("--measure")
    p.add_argument("--phi")
    p.add_argument("--payoff")
    p.add_argument("--payoff-params", help="JSON object of family parameters")
    p.add_argument("--theta-grid")
    p.add_argument("--out")

    p = common(sub.add_parser("inverse", help="existence and uniqueness from sampled values"))
    p.add_argument("--values")
    p.add_argument("--payoff")
    p.add_argument("--payoff-params")
    p.add_argument("--x-grid")
    p.add_argument("--theta-refine", type=int)
    p.add_argument("--out")
    p.add_argument("--curves", help="tidy CSV of v, v^g, phi and x*")

    p = common(sub.add_parser("birthdeath", help="birth-death chain from call values"))
    p.add_argument("--values")
    p.add_argument("--exact", action="store_true")
    p.add_argument("--out")

    p = common(sub.add_parser("verify", help="Monte Carlo hitting-time transform"))
    p.add_argument("--measure")
    p.add_argument("--x", type=float)
    p.add_argument("--paths", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--dt", type=float)
    p.add_argument("--shards", type=int)
    p.add_argument("--bridge", action="store_true")

    p = common(sub.add_parser("stockvol", help="local volatility from a decreasing eigenfunction"))
    p.add_argument("--phi")
    p.add_argument("--delta", type=float)
    p.add_argument("--out")

    p = common(sub.add_parser("examples", help="run the golden examples"), rho=False)
    p.add_argument("--no-mc", action="store_true", help="skip the Monte Carlo rows")
    return parser


def make_config(args) -> RunConfig:
    base = {}
    if getattr(args, "config", None):
        try:
            base = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
    tol = dict(base.get("tolerances", {}))
    for key in ("convexity_tol", "tie_tol", "kink_factor"):
        val = getattr(args, key, None)
        if val is not None:
            tol[key] = val
    payoff = base.get("payoff")
    if isinstance(payoff, str):
        payoff = {"name": payoff}
    if getattr(args, "payoff", None):
        payoff = {"name": args.payoff}
    if getattr(args, "payoff_params", None):
        payoff = dict(payoff or {})
        payoff["params"] = json.loads(args.payoff_params)
    grids = base.get("grids", {})
    x_grid = _pick(getattr(args, "x_grid", None), grids.get("x"))
    theta_grid = _pick(getattr(args, "theta_grid", None), grids.get("theta"))
    extra = {k: v for k, v in base.items() if k not in ("rho", "delta", "grids", "tolerances", "payoff", "mode")}
    if getattr(args, "theta_refine", None) is not None:
        extra["theta_refine"] = args.theta_refine
    return RunConfig(
        mode=args.mode,
        rho=_pick(getattr(args, "rho", None), base.get("rho")),
        delta=_pick(getattr(args, "delta", None), base.get("delta")),
        x_grid=parse_grid(x_grid) if x_grid is not None else None,
        theta_grid=parse_grid(theta_grid) if theta_grid is not None else None,
        tolerances=tol,
        payoff=payoff,
        extra=extra,
    )


COMMANDS = {
    "forward": cmd_forward,
    "inverse": cmd_inverse,
    "birthdeath": cmd_birthdeath,
    "verify": cmd_verify,
    "stockvol": cmd_stockvol,
    "examples": cmd_examples,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = make_config(args)
        return COMMANDS[args.mode](args, cfg)
    except (StopcalError, ValueError, KeyError, OSError) as exc:
        print(_dump({"error": type(exc).__name__, "message": str(exc)}))
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
