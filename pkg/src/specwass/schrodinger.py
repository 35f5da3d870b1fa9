"""The p = 1/2 optimal win-martingale in three coordinates, its Brownian-bridge
interpretation and its filtering interpretation.

On the clock r = -2 log(1 - t) the optimizer Y_r = M_t solves
dY = Y (1 - Y) dW; its logit C = log(Y / (1 - Y)) solves
dC = (1/2) tanh(C / 2) dt + dW. The law of C_t is the Gaussian law of W_t
(started at c) reweighted by cosh(z / 2) / cosh(c / 2) e^{-t/8}, i.e. the
mixture of two Brownian motions with drifts +1/2 and -1/2 with weights
proportional to e^{c/2} and e^{-c/2}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import expit, logit, ndtr

from .core import TimeGrid, derive_stream, mc_mean
from .errors import DomainError
from .sde import SimConfig, simulate, t_clock, time_change_to_infinite_horizon

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def _log_cosh(y):
    """log cosh(y) without overflow."""
    a = np.abs(y)
    return a + np.log1p(np.exp(-2.0 * a)) - math.log(2.0)


# ---------------------------------------------------------------- law of C

def density_C(t: float, z, c: float = 0.0):
    """Density of C_t started at c: phi(z; c, t) cosh(z/2) / cosh(c/2) e^{-t/8}."""
    if not t > 0:
        raise DomainError("density_C needs t > 0")
    z = np.asarray(z, dtype=np.float64)
    log_phi = -0.5 * (z - c) ** 2 / t - 0.5 * math.log(t) - LOG_SQRT_2PI
    out = np.exp(log_phi + _log_cosh(0.5 * z) - _log_cosh(0.5 * c) - t / 8.0)
    return out if out.ndim else float(out)


def mixture_weights(c: float) -> tuple[float, float]:
    """Weights of the drift +1/2 and drift -1/2 components."""
    w_plus = float(expit(c))
    return w_plus, 1.0 - w_plus


def density_C_mixture(t: float, z, c: float = 0.0):
    """Same density written as a mixture of N(c + t/2, t) and N(c - t/2, t)."""
    if not t > 0:
        raise DomainError("density_C needs t > 0")
    z = np.asarray(z, dtype=np.float64)
    wp, wm = mixture_weights(c)
    s = math.sqrt(t)
    norm = 1.0 / (s * math.sqrt(2.0 * math.pi))
    out = norm * (wp * np.exp(-0.5 * ((z - c - t / 2) / s) ** 2) + wm * np.exp(-0.5 * ((z - c + t / 2) / s) ** 2))
    return out if out.ndim else float(out)


def cdf_C(t: float, z, c: float = 0.0):
    """Distribution function of C_t started at c."""
    if not t > 0:
        raise DomainError("cdf_C needs t > 0")
    z = np.asarray(z, dtype=np.float64)
    wp, wm = mixture_weights(c)
    s = math.sqrt(t)
    out = wp * ndtr((z - c - t / 2) / s) + wm * ndtr((z - c + t / 2) / s)
    return out if out.ndim else float(out)


def drift_C(x):
    """(1/2) tanh(x / 2)."""
    out = 0.5 * np.tanh(0.5 * np.asarray(x, dtype=np.float64))
    return out if out.ndim else float(out)


def y_potential(t: float, k, x0: float) -> np.ndarray:
    """E|Y_t - k| for dY = Y (1 - Y) dW, Y_0 = x0, computed from the law of C_t."""
    if not 0.0 < x0 < 1.0:
        raise DomainError("x0 must lie in (0, 1)")
    c = float(logit(x0))
    ks = np.atleast_1d(np.asarray(k, dtype=np.float64))
    half = 12.0 * math.sqrt(t) + 0.5 * t
    out = np.empty(ks.size)
    for j, kk in enumerate(ks):
        f = lambda z: abs(expit(z) - kk) * density_C(t, z, c)  # noqa: E731
        split = [float(logit(kk))] if 0.0 < kk < 1.0 else []
        pts = [c - half] + [s for s in split if c - half < s < c + half] + [c + half]
        out[j] = sum(integrate.quad(f, a, b, epsabs=1e-13, epsrel=1e-12, limit=200)[0]
                     for a, b in zip(pts[:-1], pts[1:]))
    return out


# ---------------------------------------------------------------- bridges

@dataclass(frozen=True)
class BridgeParams:
    """Brownian bridge from c = 0 at time 0 to +-T/2 at time T, viewed at time t."""

    T: float
    t: float
    c: float = 0.0

    def __post_init__(self):
        if not self.T > 0:
            raise DomainError("the horizon T must be positive")
        if not 0.0 <= self.t < self.T:
            raise DomainError("need 0 <= t < T")
        if self.c != 0.0:
            raise DomainError("only bridges started at c = 0 are supported")


def bridge_density(params: BridgeParams, x):
    """f^T(t, x), the density of the two-point bridge w.r.t. Wiener measure at time t."""
    T, t = params.T, params.t
    x = np.asarray(x, dtype=np.float64)
    rem = T - t
    log_f = (0.5 * math.log(T / rem) - x * x / (2.0 * rem) - T * T / 8.0 * (1.0 / rem - 1.0 / T)
             + _log_cosh(x * T / (2.0 * rem)))
    out = np.exp(log_f)
    return out if out.ndim else float(out)


def bridge_density_ratio(params: BridgeParams, x):
    """f^T(t, x) as the ratio of the time-t transition density of the bridge
    mixture to its time-0 normalization."""
    T, t = params.T, params.t
    x = np.asarray(x, dtype=np.float64)
    rem = T - t
    num = (np.exp(-(x - T / 2) ** 2 / (2 * rem)) + np.exp(-(x + T / 2) ** 2 / (2 * rem))) / math.sqrt(2 * math.pi * rem)
    den = 2.0 * math.exp(-(T / 2) ** 2 / (2 * T)) / math.sqrt(2 * math.pi * T)
    out = num / den
    return out if out.ndim else float(out)


def bridge_drift(params: BridgeParams, x):
    """d/dx log f^T(t, x) = T / (2 (T - t)) tanh(x T / (2 (T - t))) - x / (T - t)."""
    T, t = params.T, params.t
    x = np.asarray(x, dtype=np.float64)
    rem = T - t
    out = T / (2.0 * rem) * np.tanh(x * T / (2.0 * rem)) - x / rem
    return out if out.ndim else float(out)


# ---------------------------------------------------------------- C paths

@dataclass(frozen=True)
class CPathConfig:
    """Euler–Maruyama stepping for dC = drift_C(C) dt + dW."""

    n_steps: int = 512

    def __post_init__(self):
        if self.n_steps < 1:
            raise DomainError("n_steps must be positive")


def _c_chunk(seed, first, count, n_steps, dt, c0, integrand):
    sq = math.sqrt(dt)
    z = np.empty((count, n_steps))
    for j in range(count):
        z[j] = derive_stream(seed, first + j, 0).normal(n_steps)
    x = np.full(count, float(c0))
    acc = np.zeros(count)
    for i in range(n_steps):
        u = i * dt
        if integrand is not None:
            acc += integrand(u, x) * dt
        x = x + drift_C(x) * dt + sq * z[:, i]
    return x, acc


def simulate_C(t: float, K: int, seed: int, cfg: CPathConfig | None = None, c0: float = 0.0, integrand=None,
               chunk: int = 4096):
    """K Euler–Maruyama paths of C on [0, t]; returns (C_t, left-point integral of ``integrand``)."""
    cfg = cfg or CPathConfig()
    if t < 0:
        raise DomainError("t must be nonnegative")
    if t == 0:
        return np.full(K, float(c0)), np.zeros(K)
    dt = t / cfg.n_steps
    parts = [_c_chunk(seed, f, min(chunk, K - f), cfg.n_steps, dt, c0, integrand) for f in range(0, K, chunk)]
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def entropy_gap(T: float, t: float = 1.0, K: int = 10_000, cfg: CPathConfig | None = None,
                seed: int = 0) -> tuple[float, float]:
    """Relative entropy of the law of C on [0, t] w.r.t. the two-point bridge of horizon T:
    (1/2) E int_0^t (drift_C(C_u) - d/dx log f^T(u, C_u))^2 du."""
    if not 0.0 <= t < T:
        raise DomainError("need 0 <= t < T")
    if t == 0.0:
        return 0.0, 0.0

    def gap(u, x):
        return 0.5 * (drift_C(x) - bridge_drift(BridgeParams(T, u), x)) ** 2

    _, acc = simulate_C(t, K, seed, cfg, integrand=gap)
    return mc_mean(acc)


def entropy_gap_table(T_values=(5.0, 10.0, 20.0, 40.0), t: float = 1.0, K: int = 10_000,
                      cfg: CPathConfig | None = None, seed: int = 0) -> list[dict]:
    """Entropy gaps over horizons, all on the same C paths."""
    rows = []
    for T in T_values:
        est, se = entropy_gap(T, t, K, cfg, seed)
        rows.append({"T": float(T), "estimate": est, "stderr": se})
    return rows


def bridge_drift_gap_fit(T_values=(5.0, 10.0, 20.0, 40.0, 80.0), t_max: float = 1.0, x_max: float = 3.0,
                         n: int = 61) -> dict:
    """sup |bridge_drift - drift_C| over |x| <= x_max, t <= t_max, and the fitted constant in gap <= K / T."""
    xs = np.linspace(-x_max, x_max, n)
    ts = np.linspace(0.0, t_max, n)
    sups = []
    for T in T_values:
        sups.append(max(float(np.max(np.abs(bridge_drift(BridgeParams(T, u), xs) - drift_C(xs)))) for u in ts))
    fitted = max(s * T for s, T in zip(sups, T_values))
    return {"T": list(map(float, T_values)), "sup_gap": sups, "fitted_K": fitted}


# ---------------------------------------------------------------- logit change of variables

def logit_change_check(K: int = 100_000, seed: int = 0, x0: float = 0.5, t: float = 1.0, n_cells: int = 64,
                       cfg: SimConfig | None = None, workers: int = 1, profile=None) -> dict:
    """Simulate the p = 1/2 optimizer on the Y clock, map through the logit and
    compare C_t with the law given by :func:`density_C`.

    Reports the Kolmogorov–Smirnov distance (with the band 1.5 * 1.63 / sqrt(K)),
    the mean realized quadratic variation of C over [0, t] (expected t), and
    E[Y_t] against x0.
    """
    from .winmart import solve_profile

    if not 0.0 < x0 < 1.0:
        raise DomainError("x0 must lie in (0, 1)")
    profile = profile or solve_profile(0.5)
    cfg = cfg or SimConfig(substeps_per_cell=16)
    grid = TimeGrid(t_clock(np.linspace(0.0, t, n_cells + 1)))
    ens = time_change_to_infinite_horizon(simulate(profile.model(x0), grid, K, seed, cfg, workers=workers))
    y = ens.states
    inside = np.all((y > 0.0) & (y < 1.0), axis=1)
    excluded = int(K - inside.sum())
    yin = y[inside]
    c = logit(yin)
    c_t = np.sort(c[:, -1])
    n = c_t.size
    F = cdf_C(t, c_t, float(logit(x0)))
    ks = float(max(np.max(np.arange(1, n + 1) / n - F), np.max(F - np.arange(n) / n)))
    qv = np.sum(np.diff(c, axis=1) ** 2, axis=1)
    qv_mean, qv_se = mc_mean(qv)
    y_mean, y_se = mc_mean(y[:, -1])
    band = 1.5 * 1.63 / math.sqrt(K)
    return {"t": t, "x0": x0, "K": K, "excluded": excluded, "ks": ks, "ks_band": band, "ks_ok": bool(ks < band),
            "qv_mean": qv_mean, "qv_stderr": qv_se, "qv_ok": bool(abs(qv_mean - t) < 0.02 * t),
            "y_mean": y_mean, "y_stderr": y_se, "y_mean_ok": bool(abs(y_mean - x0) <= 3.0 * y_se)}


def density_table(t: float, c_samples, c: float = 0.0, bins: int = 60) -> np.ndarray:
    """Columns z, model density, empirical histogram density."""
    c_samples = np.asarray(c_samples, dtype=np.float64)
    hist, edges = np.histogram(c_samples, bins=bins, density=True)
    mid = 0.5 * (edges[1:] + edges[:-1])
    return np.column_stack([mid, density_C(t, mid, c), hist])


# ---------------------------------------------------------------- filtering

def filtering_posterior(x, t, x0: float):
    """P(u = 1 | X_t = x) for X = u t + B with u ~ Bernoulli(x0)."""
    if not 0.0 < x0 < 1.0:
        raise DomainError("x0 must lie in (0, 1)")
    out = expit(np.asarray(x, dtype=np.float64) - np.asarray(t, dtype=np.float64) / 2.0 + logit(x0))
    return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class FilterConfig:
    """Time stepping of the filtering experiment."""

    n_steps: int = 1024
    n_checkpoints: int = 4
    strikes: tuple = (0.1, 0.25, 0.5, 0.75, 0.9)

    def __post_init__(self):
        if self.n_steps < 1 or self.n_checkpoints < 1 or self.n_steps % (1 << (self.n_checkpoints - 1)):
            raise DomainError("n_steps must be a positive multiple of 2^(n_checkpoints - 1)")


def _filter_chunk(seed, first, count, n_steps, dt, x0, force_u, ckpt):
    sq = math.sqrt(dt)
    z = np.empty((count, n_steps))
    u = np.empty(count)
    for j in range(count):
        rs = derive_stream(seed, first + j, 0)
        z[j] = rs.normal(n_steps)
        u[j] = 1.0 if force_u is not None and force_u == 1 else (
            0.0 if force_u is not None else float(rs.uniform() < x0))
    x = np.zeros(count)
    p_prev = np.full(count, x0)
    qv = np.zeros(count)
    pred = np.zeros(count)
    snaps = {}
    for i in range(n_steps):
        pred += (p_prev * (1.0 - p_prev)) ** 2 * dt
        x = x + u * dt + sq * z[:, i]
        p_new = filtering_posterior(x, (i + 1) * dt, x0)
        qv += (p_new - p_prev) ** 2
        p_prev = p_new
        if i + 1 in ckpt:
            snaps[i + 1] = p_new.copy()
    return u, qv, pred, snaps


def filtering_experiment(x0: float = 0.5, horizon: float = 4.0, K: int = 100_000, cfg: FilterConfig | None = None,
                         seed: int = 0, force_u: int | None = None, chunk: int = 4096) -> dict:
    """Posterior P_t of a Bernoulli drift observed through X = u t + B.

    Checks: (a) E[P_t] = x0 at every checkpoint within 3 stderr; (b) mean realized
    QV of P equals mean sum P^2 (1 - P)^2 dt within 2%; (c) at the horizon,
    E|P - k| matches E|Y - k| for dY = Y (1 - Y) dW within 3 stderr at each
    strike k; (d) mean |P_t - u| strictly decreases over the checkpoints
    horizon / 2^j. ``force_u`` fixes the drift instead of drawing it.
    """
    if not 0.0 < x0 < 1.0:
        raise DomainError("x0 must lie in (0, 1)")
    if not horizon > 0:
        raise DomainError("horizon must be positive")
    if force_u not in (None, 0, 1):
        raise DomainError("force_u must be None, 0 or 1")
    cfg = cfg or FilterConfig()
    n = cfg.n_steps
    dt = horizon / n
    ckpt = [n >> j for j in reversed(range(cfg.n_checkpoints))]
    parts = [_filter_chunk(seed, f, min(chunk, K - f), n, dt, x0, force_u, set(ckpt)) for f in range(0, K, chunk)]
    u = np.concatenate([p[0] for p in parts])
    qv = np.concatenate([p[1] for p in parts])
    pred = np.concatenate([p[2] for p in parts])
    snaps = {s: np.concatenate([p[3][s] for p in parts]) for s in ckpt}
    times = [s * dt for s in ckpt]

    means = [mc_mean(snaps[s]) for s in ckpt]
    a_ok = all(abs(m - x0) <= 3.0 * se for m, se in means)
    qv_mean, pred_mean = float(np.mean(qv)), float(np.mean(pred))
    b_ok = abs(qv_mean - pred_mean) <= 0.02 * pred_mean
    p_T = snaps[ckpt[-1]]
    strikes = np.asarray(cfg.strikes, dtype=np.float64)
    exact = y_potential(horizon, strikes, x0)
    pot = [mc_mean(np.abs(p_T - k)) for k in strikes]
    c_ok = all(abs(m - e) <= 3.0 * se for (m, se), e in zip(pot, exact))
    conc = [float(np.mean(np.abs(snaps[s] - u))) for s in ckpt]
    d_ok = all(b < a for a, b in zip(conc[:-1], conc[1:]))
    checks = {"mean": a_ok, "quadratic_variation": b_ok, "law": c_ok, "concentration": d_ok}
    if force_u is not None:
        checks = {"drifts_toward_u": bool((means[-1][0] > x0) if force_u == 1 else (means[-1][0] < x0)),
                  "concentration": d_ok}
    return {"x0": x0, "horizon": horizon, "K": K, "force_u": force_u, "times": times,
            "mean_P": [m for m, _ in means], "mean_P_stderr": [se for _, se in means],
            "qv_mean": qv_mean, "predicted_qv_mean": pred_mean,
            "strikes": strikes.tolist(), "potential_P": [m for m, _ in pot],
            "potential_P_stderr": [se for _, se in pot], "potential_Y": exact.tolist(),
            "mean_abs_error": conc, "checks": checks, "all_pass": bool(all(checks.values()))}
