"""Euler–Maruyama simulation of driftless diffusions dX = sigma(t, X) dB.

Every path k draws its Gaussian increments from ``derive_stream(seed, k)``, so
an ensemble does not depend on how paths are split between workers, and two
models simulated with the same seed share their driving noise.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr

from .core import MartingaleModel, PathEnsemble, TimeGrid, derive_stream, make_dyadic_grid
from .errors import DomainError, UnsupportedError
from .wasserstein1 import EmpiricalDist

# substream layout inside a path's keyed stream
SUB_PATH = 0
SUB_SNAP = 1
SUB_BRIDGE = 2
SUB_INNER = 3

_CHUNK_ELEMENTS = 1 << 22


@dataclass(frozen=True)
class SimConfig:
    """Time-stepping controls.

    Parameters
    ----------
    substeps_per_cell : int
        Euler substeps inside each grid cell (before any geometric refinement).
    singular_step_rule : {"uniform", "geometric"}
        ``"geometric"`` additionally caps each substep at ``(1 - ratio) * (1 - t)``,
        i.e. uniform steps of size ``2 (1 - ratio)`` in the clock ``r = -2 log(1 - t)``.
    ratio : float
        Shrink ratio of the geometric rule, in (0, 1).
    t_cut : float
        Simulation stops here for fields that blow up at t = 1.
    terminal_rule : {"none", "bernoulli_snap"}
        ``"bernoulli_snap"`` draws X_1 ~ Bernoulli(X_{t_cut}) for [0,1]-valued models.
    boundary_rule : {"bridge", "clamp"}
        Step rule for absorbing [0,1] models, see :func:`absorbing_step`.
    """

    substeps_per_cell: int = 1
    singular_step_rule: str = "uniform"
    ratio: float = 0.98
    t_cut: float = 1.0 - 2.0 ** -16
    terminal_rule: str = "none"
    boundary_rule: str = "bridge"

    def __post_init__(self):
        if int(self.substeps_per_cell) != self.substeps_per_cell or self.substeps_per_cell < 1:
            raise DomainError("substeps_per_cell must be a positive integer")
        if self.singular_step_rule not in ("uniform", "geometric"):
            raise DomainError(f"unknown step rule {self.singular_step_rule!r}")
        if not 0.0 < self.ratio < 1.0:
            raise DomainError("ratio must lie in (0, 1)")
        if not 0.0 < self.t_cut <= 1.0:
            raise DomainError("t_cut must lie in (0, 1]")
        if self.terminal_rule not in ("none", "bernoulli_snap"):
            raise DomainError(f"unknown terminal rule {self.terminal_rule!r}")
        if self.boundary_rule not in ("bridge", "clamp"):
            raise DomainError(f"unknown boundary rule {self.boundary_rule!r}")


@dataclass(frozen=True)
class StepSchedule:
    """Flattened substeps: start times, sizes and owning grid cell."""

    times: np.ndarray
    dts: np.ndarray
    cells: np.ndarray
    snap: bool
    t_stop: float

    @property
    def n_steps(self) -> int:
        return self.times.size


def build_schedule(grid: TimeGrid, cfg: SimConfig, singular: bool = False,
                   boundary_unit: bool = False) -> StepSchedule:
    """Deterministic substep schedule shared by every path.

    For singular fields the last grid point may be 1 only with the Bernoulli
    snap; interior grid points above ``t_cut`` are rejected.
    """
    pts = grid.points
    snap = False
    t_stop = grid.t_end
    if singular:
        if cfg.t_cut >= 1.0:
            raise DomainError("a field singular at t=1 needs t_cut < 1")
        if grid.t_end > cfg.t_cut:
            if np.any((pts > cfg.t_cut) & (pts < 1.0)) or grid.t_end < 1.0:
                raise DomainError(f"grid points in (t_cut={cfg.t_cut}, 1) cannot be simulated")
            if cfg.terminal_rule != "bernoulli_snap" or not boundary_unit:
                raise DomainError("reaching t=1 with a singular field needs the bernoulli_snap rule "
                                  "on a [0,1]-valued model")
            if pts[-2] >= cfg.t_cut:
                raise DomainError("t_cut must lie inside the last grid cell")
            snap, t_stop = True, cfg.t_cut
    times, dts, cells = [], [], []
    geometric = cfg.singular_step_rule == "geometric"
    for i in range(grid.n_cells):
        a, b = float(pts[i]), float(pts[i + 1])
        end = min(b, t_stop)
        base = (b - a) / cfg.substeps_per_cell
        if not geometric:
            n_sub = cfg.substeps_per_cell if end == b else max(1, math.ceil((end - a) / base - 1e-9))
            seq = a + (end - a) * (np.arange(n_sub + 1) / n_sub)
            seq[-1] = end
        else:
            seq = [a]
            t = a
            while True:
                dt = min(base, (1.0 - cfg.ratio) * (1.0 - t))
                if t + dt * (1.0 + 1e-9) >= end:
                    seq.append(end)
                    break
                t += dt
                seq.append(t)
            seq = np.array(seq)
        times.append(seq[:-1])
        dts.append(np.diff(seq))
        cells.append(np.full(seq.size - 1, i, dtype=np.int64))
    times, dts, cells = np.concatenate(times), np.concatenate(dts), np.concatenate(cells)
    return StepSchedule(times, dts, cells, snap, t_stop)


def path_noise(seed: int, first: int, count: int, n_steps: int) -> np.ndarray:
    """Standard normals for paths ``first .. first+count-1``; row k comes from path k's stream."""
    out = np.empty((count, n_steps))
    for j in range(count):
        out[j] = derive_stream(seed, first + j, SUB_PATH).normal(n_steps)
    return out


def bridge_uniforms(seed: int, first: int, count: int, n_steps: int) -> np.ndarray:
    out = np.empty((count, n_steps))
    for j in range(count):
        out[j] = derive_stream(seed, first + j, SUB_BRIDGE).uniform(n_steps)
    return out


def snap_uniforms(seed: int, first: int, count: int) -> np.ndarray:
    return np.array([derive_stream(seed, first + j, SUB_SNAP).uniform() for j in range(count)])


def absorbing_step(x: np.ndarray, sd: np.ndarray, z: np.ndarray, u: np.ndarray | None = None,
                   rule: str = "bridge") -> np.ndarray:
    """One Euler step of a [0,1]-valued martingale absorbed at 0 and 1.

    ``"clamp"`` projects the Gaussian proposal x + sd z onto [0, 1].
    ``"bridge"`` also absorbs a path whose proposal stays inside when the
    Brownian bridge between x and the proposal would have crossed a boundary,
    which happens with probability exp(-2 d d' / sd^2) for boundary distances
    d, d'. With a frozen volatility this is the exact absorbed step, so the
    step remains a martingale increment; ``u`` is the uniform used for the test.
    """
    new = x + sd * z
    alive = (x > 0.0) & (x < 1.0)
    if rule == "clamp" or u is None:
        new = np.clip(new, 0.0, 1.0, out=new)
        return np.where(alive, new, x)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        var = sd * sd
        p_low = np.where(new > 0.0, np.exp(-2.0 * x * new / var), 1.0)
        p_high = np.where(new < 1.0, np.exp(-2.0 * (1.0 - x) * (1.0 - new) / var), 1.0)
    p_low = np.where(var > 0.0, p_low, 0.0)
    p_high = np.where(var > 0.0, p_high, 0.0)
    low = (new <= 0.0) | (u < p_low)
    high = (new >= 1.0) | ((u >= p_low) & (u < p_low + p_high))
    new = np.where(low, 0.0, np.where(high, 1.0, new))
    return np.where(alive, new, x)


Integrand = Callable[[float, np.ndarray, np.ndarray], np.ndarray]


def _run_chunk(models, sched: StepSchedule, seed, first, count, n_cells, integrands, x_start, rule):
    # step-major layout so that each step reads contiguous memory
    z = np.ascontiguousarray(path_noise(seed, first, count, sched.n_steps).T)
    need_u = rule == "bridge" and any(m.boundary == "absorbing" for m in models)
    bu = np.ascontiguousarray(bridge_uniforms(seed, first, count, sched.n_steps).T) if need_u else None
    sqdt = np.sqrt(sched.dts)
    results = []
    for model in models:
        x = np.full(count, float(model.x0)) if x_start is None else np.array(x_start[first:first + count], dtype=float)
        states = np.empty((count, n_cells + 1))
        states[:, 0] = x
        qv = np.zeros((count, n_cells))
        acc = {name: np.zeros((count, n_cells)) for name in integrands}
        absorbing = model.boundary == "absorbing"
        vol = model.vol
        cur = 0
        for j in range(sched.n_steps):
            t, dt, c = sched.times[j], sched.dts[j], sched.cells[j]
            if c != cur:
                states[:, cur + 1:c + 1] = x[:, None]
                cur = c
            if absorbing:
                # absorbed paths have zero volatility on a [0,1] model
                idx = np.flatnonzero((x > 0.0) & (x < 1.0))
                xa = x[idx]
                sa = vol.eval(t, xa)
                sig = np.zeros(count)
                sig[idx] = sa
            else:
                sig = vol.eval(t, x)
            qv[:, c] += sig * sig * dt
            for name, f in integrands.items():
                acc[name][:, c] += f(t, x, sig) * dt
            if absorbing:
                if idx.size:
                    x = x.copy()
                    x[idx] = absorbing_step(xa, sa * sqdt[j], z[j, idx], None if bu is None else bu[j, idx], rule)
            else:
                x = x + sig * sqdt[j] * z[j]
        states[:, cur + 1:] = x[:, None]
        pre = None
        if sched.snap:
            pre = x.copy()
            u = snap_uniforms(seed, first, count)
            states[:, -1] = (u < x).astype(float)
        results.append((states, qv, acc, pre))
    return results


def simulate_many(models: Sequence[MartingaleModel], grid: TimeGrid, K: int, seed: int,
                  cfg: SimConfig | None = None, integrands: dict[str, Integrand] | None = None,
                  workers: int = 1, x_start: np.ndarray | None = None) -> list[PathEnsemble]:
    """Simulate several models on common random numbers.

    Path k of every returned ensemble is driven by the same Gaussian
    increments. ``integrands`` maps a name to f(t, x, sigma); each is
    accumulated per cell as sum f * dt over the substeps.
    """
    cfg = cfg or SimConfig()
    integrands = integrands or {}
    if K < 1:
        raise DomainError("K must be positive")
    if not models:
        raise DomainError("no models given")
    singular = any(m.vol.singular_at_end for m in models)
    unit = all(m.state_domain == "unit" for m in models)
    for m in models:
        t0, t1 = m.vol.time_domain
        if grid.t_start < t0 or (grid.t_end > t1 and not m.vol.singular_at_end):
            raise DomainError(f"grid [{grid.t_start}, {grid.t_end}] outside the time domain of {m.tag}")
    sched = build_schedule(grid, cfg, singular, unit)
    n_cells = grid.n_cells
    per_chunk = max(1, min(4096, _CHUNK_ELEMENTS // (2 * max(sched.n_steps, 1))))
    starts = list(range(0, K, per_chunk))

    def job(first):
        return _run_chunk(models, sched, seed, first, min(per_chunk, K - first), n_cells, integrands, x_start,
                          cfg.boundary_rule)

    if workers > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(job, starts))
    else:
        chunks = [job(s) for s in starts]

    out = []
    for mi, model in enumerate(models):
        parts = [c[mi] for c in chunks]
        states = np.concatenate([p[0] for p in parts])
        qv = np.concatenate([p[1] for p in parts])
        ints = {name: np.concatenate([p[2][name] for p in parts]) for name in integrands}
        pre = np.concatenate([p[3] for p in parts]) if sched.snap else None
        out.append(PathEnsemble(grid, states, qv, model_tag=model.tag, master_seed=seed,
                                integrals=ints, pre_snap=pre))
    return out


def simulate(model: MartingaleModel, grid: TimeGrid, K: int, seed: int, cfg: SimConfig | None = None,
             integrands: dict[str, Integrand] | None = None, workers: int = 1) -> PathEnsemble:
    """K independent Euler–Maruyama paths of ``model`` sampled on ``grid``."""
    return simulate_many([model], grid, K, seed, cfg, integrands, workers)[0]


def win_config(t_cut: float = 1.0 - 2.0 ** -16, ratio: float = 0.98, substeps_per_cell: int = 64) -> SimConfig:
    """Stepping suited to volatilities of order (1 - t)^(-1/2)."""
    return SimConfig(substeps_per_cell=substeps_per_cell, singular_step_rule="geometric", ratio=ratio,
                     t_cut=t_cut, terminal_rule="bernoulli_snap")


def simulate_win(p: float, x0: float, profile=None, K: int = 10_000, seed: int = 0,
                 cfg: SimConfig | None = None, grid: TimeGrid | None = None,
                 integrands: dict[str, Integrand] | None = None, workers: int = 1) -> PathEnsemble:
    """Simulate the p-optimal win-martingale from x0 and snap M_1 ~ Bernoulli(M_{t_cut})."""
    if not p > 0:
        raise DomainError("p must be positive")
    if not 0.0 < x0 < 1.0:
        raise DomainError("x0 must lie in (0, 1)")
    cfg = cfg or win_config()
    if cfg.terminal_rule != "bernoulli_snap" or not cfg.t_cut < 1.0:
        raise DomainError("simulate_win needs t_cut < 1 and the bernoulli_snap terminal rule")
    if profile is None:
        from .winmart import solve_profile
        profile = solve_profile(p)
    elif abs(profile.p - p) > 1e-12:
        raise DomainError(f"profile was built for p={profile.p}, not {p}")
    grid = grid or make_dyadic_grid(0.0, 1.0, 4)
    return simulate(profile.model(x0), grid, K, seed, cfg, integrands, workers)


def sample_one_step(model: MartingaleModel, t0: float, t1: float, x: float, M: int, substeps: int,
                    rng) -> EmpiricalDist:
    """M draws of X_{t1} given X_{t0} = x, each through ``substeps`` Euler steps."""
    if not model.vol.markov:
        raise UnsupportedError("one-step sampling needs a Markov volatility field")
    if not t1 > t0:
        raise DomainError("need t0 < t1")
    if substeps < 1 or M < 1:
        raise DomainError("M and substeps must be positive")
    dt = (t1 - t0) / substeps
    sq = math.sqrt(dt)
    z = rng.normal((substeps, M))
    u = rng.uniform((substeps, M)) if model.boundary == "absorbing" else None
    xs = np.full(M, float(x))
    for j in range(substeps):
        sig = model.vol.eval(t0 + j * dt, xs)
        if model.boundary == "absorbing":
            xs = absorbing_step(xs, sig * sq, z[j], u[j])
        else:
            xs = xs + sig * sq * z[j]
    return EmpiricalDist(xs)


def r_clock(t):
    """r = -2 log(1 - t)."""
    t = np.asarray(t, dtype=float)
    if np.any(t >= 1.0):
        raise DomainError("the time change is undefined at t = 1")
    return -2.0 * np.log1p(-t)


def t_clock(r):
    """Inverse of :func:`r_clock`: t = 1 - exp(-r / 2)."""
    return -np.expm1(-0.5 * np.asarray(r, dtype=float))


def time_change_to_infinite_horizon(ensemble: PathEnsemble) -> PathEnsemble:
    """Relabel grid times by r = -2 log(1 - t); states are unchanged."""
    if ensemble.grid.clock != "t":
        raise DomainError("ensemble is already on the r clock")
    if ensemble.grid.t_end >= 1.0:
        raise DomainError("source grid must stay strictly below t = 1")
    grid = TimeGrid(r_clock(ensemble.grid.points), clock="r")
    return PathEnsemble(grid, ensemble.states, ensemble.realized_qv, ensemble.model_tag,
                        ensemble.master_seed, dict(ensemble.integrals), ensemble.pre_snap)
