"""Monte Carlo cross-checks of hitting-time Laplace transforms and stopped values.

Randomness: numpy Philox streams, one per shard, spawned from a single
SeedSequence.  Shard results are merged in shard order with the Chan
pairwise update, so estimates depend on (seed, shards) only and not on how
many threads ran them.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .birthdeath import BirthDeathChain
from .diffusion import SpeedMeasure
from .errors import StepTooCoarse, ValidationError
from .payoffs import PayoffFamily

THREADS_ENV = "STOPCAL_THREADS"


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    paths: int = 10_000
    dt: float = 1e-4
    t_max: float = 20.0
    shards: int = 8
    bridge: bool = False
    max_jumps: int = 100_000

    def __post_init__(self):
        if self.paths < 100:
            raise ValidationError("paths must be at least 100")
        if not self.dt > 0 or not self.t_max > 0:
            raise ValidationError("dt and t_max must be positive")
        if self.shards < 1 or self.shards > self.paths:
            raise ValidationError("shards must be in [1, paths]")
        if not 0 <= self.seed < 2**64:
            raise ValidationError("seed must fit in 64 bits")
        if self.max_jumps < 1:
            raise ValidationError("max_jumps must be positive")


@dataclass(frozen=True)
class Estimate:
    mean: float
    stderr: float
    paths_used: int
    truncated_fraction: float
    lower_bound: float

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


@dataclass(frozen=True)
class _Moments:
    n: int
    mean: float
    m2: float
    truncated: int
    trunc_weight: float


def _merge(a: _Moments, b: _Moments) -> _Moments:
    n = a.n + b.n
    if n == 0:
        return a
    d = b.mean - a.mean
    mean = a.mean + d * b.n / n
    m2 = a.m2 + b.m2 + d * d * a.n * b.n / n
    return _Moments(n, mean, m2, a.truncated + b.truncated, a.trunc_weight + b.trunc_weight)


def _moments(samples: np.ndarray, truncated: np.ndarray) -> _Moments:
    n = len(samples)
    mean = float(np.mean(samples))
    m2 = float(np.sum((samples - mean) ** 2))
    return _Moments(n, mean, m2, int(truncated.sum()), float(samples[truncated].sum()))


def _thread_count(shards: int) -> int:
    cap = os.environ.get(THREADS_ENV)
    limit = os.cpu_count() or 1
    if cap:
        try:
            limit = max(1, int(cap))
        except ValueError:
            raise ValidationError(f"{THREADS_ENV} must be an integer") from None
    return max(1, min(shards, limit))


def _shard_streams(cfg: SimConfig):
    children = np.random.SeedSequence(cfg.seed).spawn(cfg.shards)
    sizes = [cfg.paths // cfg.shards + (1 if i < cfg.paths % cfg.shards else 0) for i in range(cfg.shards)]
    return [np.random.Generator(np.random.Philox(c)) for c in children], sizes


def _combine(cfg: SimConfig, parts) -> Estimate:
    """Merge per-shard samples in shard order."""
    moments = [_moments(s, t) for s, t in parts]
    total = moments[0]
    for part in moments[1:]:
        total = _merge(total, part)
    var = total.m2 / (total.n - 1) if total.n > 1 else 0.0
    return Estimate(
        mean=total.mean,
        stderr=float(np.sqrt(var / total.n)),
        paths_used=total.n,
        truncated_fraction=total.truncated / total.n,
        lower_bound=total.mean - total.trunc_weight / total.n,
    )


def _run_shards(cfg: SimConfig, work) -> Estimate:
    """Run ``work(rng, n)`` per shard on a thread pool; merge order is fixed."""
    rngs, sizes = _shard_streams(cfg)
    with ThreadPoolExecutor(max_workers=_thread_count(cfg.shards)) as pool:
        parts = list(pool.map(lambda i: work(rngs[i], sizes[i]), range(cfg.shards)))
    return _combine(cfg, parts)


def _sigma_table(m: SpeedMeasure):
    if m.atoms or m.mass_at_zero > 0:
        raise ValidationError("atoms are not simulated pathwise; use the string solver")
    dens = m.density.values
    if np.any(~np.isfinite(dens)) or np.any(dens <= 0):
        raise ValidationError("density must be finite and positive for path simulation")
    return m.density.grid, 1.0 / np.sqrt(dens)


def estimate_laplace(m: SpeedMeasure, rho: float, x_target: float, cfg: SimConfig = SimConfig()) -> Estimate:
    """E_0[exp(-rho H_x)] by Euler stepping of dX = sigma(X) dW reflected at 0."""
    if not rho > 0:
        raise ValidationError("rho must be positive")
    if not 0 <= x_target < m.xi:
        raise ValidationError("x_target must lie in [0, xi)")
    if x_target == 0:
        return Estimate(1.0, 0.0, cfg.paths, 0.0, 1.0)
    grid, sig = _sigma_table(m)
    if x_target > grid[-1]:
        raise ValidationError("x_target beyond the density grid")
    inside = grid <= x_target
    sig_max = float(np.max(sig[inside])) if inside.any() else float(sig[0])
    if sig_max * np.sqrt(cfg.dt) > 0.1 * x_target:
        raise StepTooCoarse(f"sigma*sqrt(dt) = {sig_max * np.sqrt(cfg.dt):.3g} exceeds 10% of x_target")
    n_steps = int(np.ceil(cfg.t_max / cfg.dt))
    sqdt = np.sqrt(cfg.dt)
    constant = bool(np.all(sig[inside] == sig[0])) and bool(np.all(sig == sig[0]))
    rngs, sizes = _shard_streams(cfg)
    n = cfg.paths
    shard_of = np.repeat(np.arange(cfg.shards), sizes)
    x = np.zeros(n)
    live = np.arange(n)
    hit_time = np.full(n, np.inf)
    block = 256
    k = 0
    # all shards advance in one time loop; each shard draws its own normals
    while k < n_steps and live.size:
        nb = min(block, n_steps - k)
        counts = np.bincount(shard_of[live], minlength=cfg.shards)
        z = np.concatenate([r.standard_normal((c, nb)) for r, c in zip(rngs, counts)])
        u = np.concatenate([r.random((c, nb)) for r, c in zip(rngs, counts)]) if cfg.bridge else None
        rows = np.arange(live.size)
        for j in range(nb):
            k += 1
            s_ = sig[0] if constant else np.interp(x, grid, sig)
            new = np.abs(x + s_ * sqdt * z[rows, j])
            hit = new >= x_target
            if cfg.bridge:
                # probability that the bridge crossed x_target inside the step
                gap = np.maximum((x_target - x) * (x_target - new), 0.0)
                hit |= u[rows, j] < np.exp(-2.0 * gap / (s_ * s_ * cfg.dt))
            if hit.any():
                hit_time[live[hit]] = k * cfg.dt
                keep = ~hit
                live, x, rows = live[keep], new[keep], rows[keep]
            else:
                x = new
            if live.size == 0:
                break
    truncated = ~np.isfinite(hit_time)
    samples = np.exp(-rho * np.where(truncated, cfg.t_max, hit_time))
    return _combine(cfg, [(samples[shard_of == i], truncated[shard_of == i]) for i in range(cfg.shards)])


def estimate_ctmc_laplace(chain: BirthDeathChain, rho: float, n_target: int, cfg: SimConfig = SimConfig()) -> Estimate:
    """E_0[exp(-rho H_n)] for the chain with exact exponential holding times."""
    if not rho > 0:
        raise ValidationError("rho must be positive")
    k = len(chain.lam)
    if not 0 <= n_target <= k:
        raise ValidationError(f"n_target must be in [0, {k}]")
    if n_target == 0:
        return Estimate(1.0, 0.0, cfg.paths, 0.0, 1.0)
    lam = np.array([float(v) for v in chain.lam])
    p = np.array([float(v) for v in chain.p])

    def work(rng, n):
        state = np.zeros(n, dtype=np.int64)
        t = np.zeros(n)
        done = np.zeros(n, dtype=bool)
        for _ in range(cfg.max_jumps):
            live = np.flatnonzero(~done)
            if live.size == 0:
                break
            s = state[live]
            t[live] += rng.exponential(1.0 / lam[s])
            up = rng.random(live.size) < p[s]
            state[live] = s + np.where(up, 1, -1)
            done[live] = state[live] == n_target
        # the jump budget is the only truncation; truncated paths report exp(-rho t)
        return np.exp(-rho * t), ~done

    return _run_shards(cfg, work)


@dataclass(frozen=True)
class StoppedValue:
    estimate: Estimate
    sweep: tuple
    maximizer_confirmed: bool


def estimate_stopped_value(
    m: SpeedMeasure,
    p: PayoffFamily,
    theta: float,
    x_stop: float,
    rho: float,
    cfg: SimConfig = SimConfig(),
    *,
    sweep: tuple = (0.8, 1.2),
) -> StoppedValue:
    """G(x_stop, theta) * E_0[exp(-rho H_{x_stop})], with a sweep over scaled stopping levels."""
    payoff = float(p.G(np.array([x_stop]), theta)[0])
    base = estimate_laplace(m, rho, x_stop, cfg)
    est = _scaled(base, payoff)
    rows = []
    confirmed = True
    for f in sweep:
        xs = x_stop * f
        if not 0 < xs < min(m.xi, m.density.grid[-1]):
            continue
        e = _scaled(estimate_laplace(m, rho, xs, cfg), float(p.G(np.array([xs]), theta)[0]))
        rows.append((xs, e))
        if e.mean > est.mean + 3 * np.hypot(e.stderr, est.stderr):
            confirmed = False
    return StoppedValue(est, tuple(rows), confirmed)


def _scaled(e: Estimate, c: float) -> Estimate:
    return Estimate(e.mean * c, e.stderr * abs(c), e.paths_used, e.truncated_fraction, e.lower_bound * c)
