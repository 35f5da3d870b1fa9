"""Discrete divergences D^{N,p} between martingale laws, their scaled limits,
and the closed-form functionals they are compared with.

For a grid 0 = t_0 < ... < t_N = 1 the pre-limit divergence is

    D^{N,p}(Q || P) = E_Q sum_i W1^p(Q_i(x_{1:i-1}), P_i(x_{i-1})),

the Q_i, P_i being one-step conditional laws. Scaled by N^{p/2-1} it converges
to the specific Wasserstein divergence

    SW_p(Q || P) = (2/pi)^{p/2} E_Q int_0^1 | |sigma(t,X)| - |eta(t,X_t)| |^p dt.

On a grid of cell length dt covering [t_start, t_end] the scaling N^{p/2-1}
generalizes to dt^{1-p/2}; both agree on [0, 1].
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .core import MartingaleModel, TimeGrid, VolatilityField, constant_field, derive_stream, make_dyadic_grid, mc_mean
from .errors import DomainError, UnsupportedError
from .sde import SUB_INNER, SimConfig, sample_one_step, simulate
from .wasserstein1 import EmpiricalDist, folded_normal_mean_array, w1_empirical

TWO_OVER_PI = 2.0 / math.pi
FINE_EXPONENT = 12


def gaussian_factor(p: float) -> float:
    """(2/pi)^{p/2}, the p-th power of W1 between N(0, 1) and the point mass at 0."""
    return TWO_OVER_PI ** (p / 2.0)


def _check_p(p):
    if not (p > 0 and math.isfinite(p)):
        raise DomainError(f"p must be positive, got {p}")
    return float(p)


def _require_markov(*models):
    for m in models:
        if not m.vol.markov:
            raise UnsupportedError(f"{m.tag}: conditional laws need a Markov volatility field")


def _scale(grid: TimeGrid, p: float) -> float:
    dt = grid.dt
    return float(dt[0]) ** (1.0 - p / 2.0)


def _fine_config(n_exponent: int, fine_exponent: int) -> SimConfig:
    return SimConfig(substeps_per_cell=1 << max(fine_exponent - n_exponent, 0))


def sw_integrand(eta: VolatilityField, p: float):
    """Per-substep integrand (2/pi)^{p/2} ||sigma| - |eta(t, x)||^p."""
    c = gaussian_factor(p)

    def f(t, x, sig):
        return c * np.abs(np.abs(sig) - np.abs(eta.eval(t, x, check=False))) ** p

    return f


# ---------------------------------------------------------------- closed forms

def sw_p_closed_form(modelQ: MartingaleModel, eta: VolatilityField, p: float, K: int, grid: TimeGrid,
                     seed: int, cfg: SimConfig | None = None, workers: int = 1) -> tuple[float, float]:
    """Monte Carlo estimate of SW_p(Q || P) along simulated Q-paths."""
    p = _check_p(p)
    ens = simulate(modelQ, grid, K, seed, cfg, {"sw": sw_integrand(eta, p)}, workers)
    return mc_mean(ens.integrals["sw"].sum(axis=1))


def _entropy_integrand(eta: VolatilityField):
    def f(t, x, sig):
        e = np.abs(eta.eval(t, x, check=False))
        if np.any(e == 0.0):
            raise DomainError("reference volatility vanishes on a visited state; the relative entropy is infinite")
        ratio = (sig / e) ** 2
        with np.errstate(divide="ignore"):
            return 0.5 * (ratio - 1.0 - np.log(ratio))

    return f


def specific_relative_entropy(modelQ: MartingaleModel, eta: VolatilityField, K: int, grid: TimeGrid, seed: int,
                              cfg: SimConfig | None = None, workers: int = 1) -> tuple[float, float]:
    """(1/2) E_Q int (sigma^2/eta^2 - 1 - log(sigma^2/eta^2)) dt."""
    ens = simulate(modelQ, grid, K, seed, cfg, {"h": _entropy_integrand(eta)}, workers)
    return mc_mean(ens.integrals["h"].sum(axis=1))


def _aw2_integrand(t, x, sig):
    return (np.abs(sig) - 1.0) ** 2


def aw2_squared_vs_wiener(modelQ: MartingaleModel, K: int, grid: TimeGrid, seed: int,
                          cfg: SimConfig | None = None, workers: int = 1) -> tuple[float, float]:
    """Adapted Wasserstein distance squared to Wiener measure, E_Q int (|sigma| - 1)^2 dt."""
    ens = simulate(modelQ, grid, K, seed, cfg, {"aw2": _aw2_integrand}, workers)
    return mc_mean(ens.integrals["aw2"].sum(axis=1))


def follmer_chain_check(modelQ: MartingaleModel, K: int, grid: TimeGrid, seed: int,
                        cfg: SimConfig | None = None, workers: int = 1) -> dict:
    """Compare (1/2) AW2^2, (1/2) SW_2 and h(Q || W) on common paths.

    SW_2 against Wiener measure is (2/pi) E int ||sigma| - |eta||^2 dt with
    eta = 1, so it is rescaled by pi/2 before halving; the two halves then
    coincide path by path. The Gaussian factor is applied once to the
    accumulated integral (not per substep), so the rescaling is exact.
    The entropy bound uses (s - 1)^2 <= s^2 - 1 - log s^2 for s > 0.
    """
    one = constant_field(1.0)

    def sw2_unscaled(t, x, sig):
        return (np.abs(sig) - np.abs(one.eval(t, x, check=False))) ** 2

    ens = simulate(modelQ, grid, K, seed, cfg,
                   {"aw2": _aw2_integrand, "sw2": sw2_unscaled, "h": _entropy_integrand(one)}, workers)
    aw = 0.5 * ens.integrals["aw2"].sum(axis=1)
    sw_unscaled = ens.integrals["sw2"].sum(axis=1)
    sw = 0.5 * sw_unscaled
    h = ens.integrals["h"].sum(axis=1)
    (half_aw2, se_aw), (half_sw2, se_sw), (h_mean, se_h) = mc_mean(aw), mc_mean(sw), mc_mean(h)
    margin, margin_se = mc_mean(h - sw)
    return {"sw2": TWO_OVER_PI * float(np.mean(sw_unscaled)),
            "half_aw2": half_aw2, "half_aw2_stderr": se_aw, "half_sw2": half_sw2, "half_sw2_stderr": se_sw,
            "h": h_mean, "h_stderr": se_h, "margin": margin, "margin_stderr": margin_se,
            "max_half_gap": float(np.max(np.abs(aw - sw))),
            "inequality_holds": bool(margin >= -3.0 * margin_se),
            "strict_margin": bool(margin > 3.0 * margin_se)}


def epsilon_sandwich_check(modelQ: MartingaleModel, p: float, eps: float, r: float, K: int, grid: TimeGrid,
                           seed: int, cfg: SimConfig | None = None, workers: int = 1) -> dict:
    """Two-sided comparison of SW_p against the constant-martingale reference
    P_delta (eta = 0) and the reference P_eps (eta = eps):

        SW(Q||P_eps) - c eps^p  <=  SW(Q||P_delta)
                                <=  (1 + r^2)^{p/2} SW(Q||P_eps) + c |1 - 1/r^2|^{p/2} eps^p,

    with c = (2/pi)^{p/2}. The right inequality is also reported with the
    constant (1 + 1/r^2) in place of |1 - 1/r^2|, which is what the elementary bound
    2 eps (s - eps) <= r^2 (s - eps)^2 + eps^2 / r^2 yields; the stated form fails for
    instance at sigma = eps, r = 1.
    """
    p = _check_p(p)
    if not 0.0 < p < 2.0:
        raise DomainError("the sandwich is stated for p in (0, 2)")
    if eps < 0 or not r > 0:
        raise DomainError("need eps >= 0 and r > 0")
    c = gaussian_factor(p)
    ens = simulate(modelQ, grid, K, seed, cfg,
                   {"delta": sw_integrand(constant_field(0.0), p), "eps": sw_integrand(constant_field(eps), p)},
                   workers)
    sw_d = ens.integrals["delta"].sum(axis=1)
    sw_e = ens.integrals["eps"].sum(axis=1)
    lhs_path = sw_e - c * eps ** p
    rhs_path = (1.0 + r * r) ** (p / 2.0) * sw_e + c * abs(1.0 - 1.0 / r ** 2) ** (p / 2.0) * eps ** p
    rhs_fix_path = (1.0 + r * r) ** (p / 2.0) * sw_e + c * (1.0 + 1.0 / r ** 2) ** (p / 2.0) * eps ** p
    lhs, lhs_se = mc_mean(lhs_path)
    mid, mid_se = mc_mean(sw_d)
    rhs, rhs_se = mc_mean(rhs_path)
    rhs_fix, _ = mc_mean(rhs_fix_path)
    left_gap, left_se = mc_mean(sw_d - lhs_path)
    right_gap, right_se = mc_mean(rhs_path - sw_d)
    right_fix_gap, right_fix_se = mc_mean(rhs_fix_path - sw_d)
    # round-off allowance: sums of integrands that cancel exactly in exact arithmetic
    tol = 1e-12 * max(abs(mid), abs(rhs_fix), c * eps ** p)
    left_ok = left_gap >= -3.0 * left_se - tol
    right_ok = right_gap >= -3.0 * right_se - tol
    return {"p": p, "eps": eps, "r": r, "lhs": lhs, "lhs_stderr": lhs_se, "mid": mid, "mid_stderr": mid_se,
            "rhs": rhs, "rhs_stderr": rhs_se, "rhs_corrected": rhs_fix,
            "left_holds": bool(left_ok), "right_holds": bool(right_ok),
            "right_corrected_holds": bool(right_fix_gap >= -3.0 * right_fix_se - tol),
            "holds": bool(left_ok and right_ok)}


# ---------------------------------------------------------------- pre-limit estimators

def _surrogate_paths(states: np.ndarray, pts: np.ndarray, volQ: VolatilityField, volP: VolatilityField,
                     p: float) -> np.ndarray:
    """Per-path N^{p/2-1} sum_i W1^p of the Gaussian one-step surrogates on grid ``pts``."""
    n = pts.size - 1
    total = np.zeros(states.shape[0])
    for i in range(n):
        t, h = float(pts[i]), float(pts[i + 1] - pts[i])
        x = states[:, i]
        sq = math.sqrt(h)
        sq_q = np.abs(volQ.eval(t, x, check=False)) * sq
        sq_p = np.abs(volP.eval(t, x, check=False)) * sq
        total += folded_normal_mean_array(0.0, sq_q - sq_p) ** p
    return total * float(pts[1] - pts[0]) ** (1.0 - p / 2.0)


def d_Np_gaussian_surrogate(modelQ: MartingaleModel, modelP: MartingaleModel, p: float, n_exponent: int, K: int,
                            seed: int, fine_exponent: int = FINE_EXPONENT, t_start: float = 0.0, t_end: float = 1.0,
                            workers: int = 1, return_paths: bool = False):
    """Scaled D^{N,p} with each one-step conditional law replaced by its Gaussian
    approximation N(x, sigma^2 dt) resp. N(x, eta^2 dt) at the left point.

    Q-paths are simulated with fine substeps (2^fine_exponent per unit time),
    the same for every N, so a given seed yields the same paths at every N.
    """
    p = _check_p(p)
    _require_markov(modelQ, modelP)
    grid = make_dyadic_grid(t_start, t_end, n_exponent)
    ens = simulate(modelQ, grid, K, seed, _fine_config(n_exponent, fine_exponent), workers=workers)
    per_path = _surrogate_paths(ens.states, grid.points, modelQ.vol, modelP.vol, p)
    est, se = mc_mean(per_path)
    return (est, se, per_path) if return_paths else (est, se)


def d_Np_nested_mc(modelQ: MartingaleModel, modelP: MartingaleModel, p: float, n_exponent: int, K_outer: int,
                   M_inner: int = 4096, inner_substeps: int = 4, seed: int = 0,
                   common_inner_noise: bool = False, fine_exponent: int = FINE_EXPONENT,
                   t_start: float = 0.0, t_end: float = 1.0, workers: int = 1) -> tuple[float, float]:
    """Scaled D^{N,p} with each conditional W1 computed between two clouds of
    M_inner one-step samples (Q- and P-dynamics from the same x_{i-1}).

    Inner clouds of outer path k and cell i use the substreams of path k's key;
    ``common_inner_noise`` drives both clouds with the same normals.
    """
    p = _check_p(p)
    _require_markov(modelQ, modelP)
    grid = make_dyadic_grid(t_start, t_end, n_exponent)
    ens = simulate(modelQ, grid, K_outer, seed, _fine_config(n_exponent, fine_exponent), workers=workers)
    pts = grid.points
    n = grid.n_cells
    per_path = np.zeros(K_outer)
    for k in range(K_outer):
        acc = 0.0
        for i in range(n):
            x = float(ens.states[k, i])
            sub_q = SUB_INNER + 2 * i
            sub_p = sub_q if common_inner_noise else sub_q + 1
            cq = sample_one_step(modelQ, pts[i], pts[i + 1], x, M_inner, inner_substeps, derive_stream(seed, k, sub_q))
            cp = sample_one_step(modelP, pts[i], pts[i + 1], x, M_inner, inner_substeps, derive_stream(seed, k, sub_p))
            acc += w1_empirical(cq, cp) ** p
        per_path[k] = acc
    per_path *= float(pts[1] - pts[0]) ** (1.0 - p / 2.0)
    return mc_mean(per_path)


@dataclass
class DivergenceReport:
    """Scaled pre-limit divergences per N next to the closed-form target."""

    p: float
    rows: list = field(default_factory=list)
    target: float = float("nan")
    target_stderr: float = float("nan")
    anchor: str = "specific Wasserstein divergence as a limit of scaled discrete divergences"

    CSV_COLUMNS = ("p", "N", "method", "scaled_value", "stderr", "target", "target_stderr", "rel_error")

    def rel_errors(self) -> np.ndarray:
        return np.array([r["rel_error"] for r in self.rows])

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.CSV_COLUMNS)
        for r in self.rows:
            w.writerow([repr(self.p), r["N"], r["method"], repr(r["scaled_value"]), repr(r["stderr"]),
                        repr(self.target), repr(self.target_stderr), repr(r["rel_error"])])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def to_dict(self) -> dict:
        return {"p": self.p, "target": self.target, "target_stderr": self.target_stderr,
                "anchor": self.anchor, "rows": self.rows}

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def convergence_table(modelQ: MartingaleModel, modelP: MartingaleModel, p: float, n_exponents, K: int, seed: int,
                      fine_exponent: int = FINE_EXPONENT, t_start: float = 0.0, t_end: float = 1.0,
                      workers: int = 1) -> DivergenceReport:
    """Scaled surrogate D^{N,p} for N = 2^n, n in ``n_exponents``, against SW_p.

    One simulation on the finest requested grid (with fine substeps) serves
    every N by dyadic subsampling, and the target integral is accumulated over
    the fine substeps of the same paths, so ``gap_stderr`` is a paired error.
    """
    p = _check_p(p)
    _require_markov(modelQ, modelP)
    if not modelP.vol.bounded:
        raise UnsupportedError("the scaling limit needs a bounded reference volatility")
    n_exponents = sorted(set(int(n) for n in n_exponents))
    n_max = n_exponents[-1]
    grid = make_dyadic_grid(t_start, t_end, n_max)
    ens = simulate(modelQ, grid, K, seed, _fine_config(n_max, fine_exponent),
                   {"sw": sw_integrand(modelP.vol, p)}, workers)
    target_paths = ens.integrals["sw"].sum(axis=1)
    target, target_se = mc_mean(target_paths)
    report = DivergenceReport(p, target=target, target_stderr=target_se)
    for n in n_exponents:
        step = 1 << (n_max - n)
        per_path = _surrogate_paths(ens.states[:, ::step], grid.points[::step], modelQ.vol, modelP.vol, p)
        est, se = mc_mean(per_path)
        gap, gap_se = mc_mean(per_path - target_paths)
        rel = abs(est - target) / abs(target) if target != 0 else abs(est - target)
        report.rows.append({"N": 1 << n, "method": "surrogate", "scaled_value": est, "stderr": se,
                            "rel_error": rel, "gap": gap, "gap_stderr": gap_se,
                            "rel_gap_stderr": gap_se / abs(target) if target != 0 else gap_se})
    return report


def per_path_limit_check(modelQ: MartingaleModel, modelP: MartingaleModel, p: float, n_exponents, seed: int,
                         K: int = 1000, fine_exponent: int = FINE_EXPONENT, workers: int = 1) -> dict:
    """Pathwise version of the scaling limit: for each path compare the scaled
    surrogate sum with (2/pi)^{p/2} int ||sigma| - |eta||^p dt along that path."""
    p = _check_p(p)
    for m in (modelQ, modelP):
        v = m.vol
        if not (v.markov and v.markov_time_homogeneous and v.lipschitz and v.uniformly_positive):
            raise UnsupportedError(f"{m.tag}: the pathwise limit needs time-homogeneous Lipschitz "
                                   "volatilities bounded away from 0 and infinity")
    n_exponents = sorted(set(int(n) for n in n_exponents))
    n_max = n_exponents[-1]
    grid = make_dyadic_grid(0.0, 1.0, n_max)
    ens = simulate(modelQ, grid, K, seed, _fine_config(n_max, fine_exponent),
                   {"sw": sw_integrand(modelP.vol, p)}, workers)
    integral = ens.integrals["sw"].sum(axis=1)
    rows = []
    for n in n_exponents:
        step = 1 << (n_max - n)
        per_path = _surrogate_paths(ens.states[:, ::step], grid.points[::step], modelQ.vol, modelP.vol, p)
        gap, gap_se = mc_mean(np.abs(per_path - integral))
        rows.append({"N": 1 << n, "mean_abs_gap": gap, "stderr": gap_se})
    mean_integral = float(np.mean(integral))
    return {"p": p, "rows": rows, "mean_integral": mean_integral,
            "final_relative_gap": rows[-1]["mean_abs_gap"] / mean_integral if mean_integral else 0.0}


# ---------------------------------------------------------------- convexity probe

@dataclass(frozen=True)
class TwoStepMeasure:
    """Finitely supported law of (X_1, X_2) given X_0 = x0: atoms (n, 2) and weights."""

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.atoms, dtype=np.float64).reshape(-1, 2)
        w = np.asarray(self.weights, dtype=np.float64).ravel()
        if w.shape[0] != a.shape[0] or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise DomainError("weights must be nonnegative, match the atoms and sum to 1")
        object.__setattr__(self, "atoms", a)
        object.__setattr__(self, "weights", w)

    def mix(self, other: "TwoStepMeasure", t: float) -> "TwoStepMeasure":
        return TwoStepMeasure(np.vstack([self.atoms, other.atoms]),
                              np.concatenate([t * self.weights, (1.0 - t) * other.weights]))


@dataclass(frozen=True)
class GaussianKernel:
    """Reference kernels: P_1 = N(m1, s1^2) and P_2(. | x1) = N(x1 + b, s2(x1)^2)."""

    m1: float = 0.0
    s1: float = 1.0
    b: float = 0.0
    s2: object = 1.0
    n_quantiles: int = 2000

    def first(self) -> EmpiricalDist:
        return _gaussian_atoms(self.m1, self.s1, self.n_quantiles)

    def second(self, x1: float) -> EmpiricalDist:
        s2 = self.s2(x1) if callable(self.s2) else self.s2
        return _gaussian_atoms(x1 + self.b, s2, self.n_quantiles)


def _gaussian_atoms(m, s, n):
    from scipy.special import ndtri
    if s == 0:
        return EmpiricalDist([m])
    q = ndtri((np.arange(n) + 0.5) / n)
    return EmpiricalDist(m + s * q)


def d2p_discrete(Q: TwoStepMeasure, kernel: GaussianKernel, p: float) -> float:
    """D^{2,p}(Q || P) by exact disintegration of the finite measure Q."""
    xs = Q.atoms[:, 0]
    keep = Q.weights > 0
    xs, ys, ws = xs[keep], Q.atoms[keep, 1], Q.weights[keep]
    uniq, inv = np.unique(xs, return_inverse=True)
    marg = np.bincount(inv, weights=ws)
    first = EmpiricalDist(uniq, marg / marg.sum())
    total = w1_empirical(first, kernel.first()) ** p
    for j, x1 in enumerate(uniq):
        sel = inv == j
        cond = EmpiricalDist(ys[sel], ws[sel] / ws[sel].sum())
        total += marg[j] * w1_empirical(cond, kernel.second(float(x1))) ** p
    return float(total)


def convexity_probe_N2(kernel: GaussianKernel, Q: TwoStepMeasure, Qtilde: TwoStepMeasure, t: float, p: float,
                       tol: float = 1e-12) -> dict:
    """Check D^{2,p}(tQ + (1-t)Q~ || P) <= t D^{2,p}(Q||P) + (1-t) D^{2,p}(Q~||P)."""
    p = _check_p(p)
    if p < 1.0:
        raise UnsupportedError("convexity in Q is only claimed for p >= 1")
    if not 0.0 <= t <= 1.0:
        raise DomainError("t must lie in [0, 1]")
    d_q = d2p_discrete(Q, kernel, p)
    d_qt = d2p_discrete(Qtilde, kernel, p)
    if t == 1.0:
        d_mix = d_q
    elif t == 0.0:
        d_mix = d_qt
    else:
        d_mix = d2p_discrete(Q.mix(Qtilde, t), kernel, p)
    bound = t * d_q + (1.0 - t) * d_qt
    return {"p": p, "t": t, "mixture": d_mix, "bound": bound, "slack": bound - d_mix,
            "holds": bool(d_mix <= bound + tol)}
