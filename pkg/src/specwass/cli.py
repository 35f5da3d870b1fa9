"""Command-line driver.

    specwass [--config PATH] [--seed U64] [--workers N] [--out DIR] COMMAND

Commands: converge, optimal, simulate, verify, schrodinger, filter. A config
is a JSON document with a top-level "command" string plus the command's
parameters; without one, built-in defaults are used. Reports are written to
the output directory (``SPECWASS_OUT`` overrides ``--out``); run metadata
that varies between runs (time, worker count) goes to ``meta.json`` only.

Exit codes: 0 all checks pass, 1 a check failed, 2 invalid configuration,
3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from .core import MartingaleModel, brownian, constant_martingale, make_dyadic_grid, sine_field
from .errors import DomainError, InconsistencyError, NumericError, UnsupportedError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
COMMANDS = ("converge", "optimal", "simulate", "verify", "schrodinger", "filter")
_MISSING = object()


class ConfigError(Exception):
    """Invalid or incomplete experiment configuration."""


# ---------------------------------------------------------------- config handling

def _get(cfg: dict, key: str, kind, default=_MISSING, check=None, what: str = ""):
    if key not in cfg:
        if default is _MISSING:
            raise ConfigError(f"missing required field {key!r}")
        return default
    val = cfg[key]
    try:
        if kind is int:
            if isinstance(val, bool) or not float(val).is_integer():
                raise ValueError
            val = int(val)
        elif kind is float:
            if isinstance(val, bool):
                raise ValueError
            val = float(val)
        elif kind is bool:
            if not isinstance(val, bool):
                raise ValueError
        elif kind is str:
            if not isinstance(val, str):
                raise ValueError
        elif kind is dict:
            if not isinstance(val, dict):
                raise ValueError
        elif kind is list:
            if not isinstance(val, list):
                raise ValueError
    except (TypeError, ValueError):
        raise ConfigError(f"field {key!r} must be of type {kind.__name__}, got {val!r}") from None
    if check is not None and not check(val):
        raise ConfigError(f"field {key!r} = {val!r} is invalid{': ' + what if what else ''}")
    return val


def _float_list(cfg, key, default=_MISSING, check=None, what=""):
    vals = _get(cfg, key, list, default)
    try:
        vals = [float(v) for v in vals]
    except (TypeError, ValueError):
        raise ConfigError(f"field {key!r} must be a list of numbers") from None
    if check is not None and not all(check(v) for v in vals):
        raise ConfigError(f"field {key!r} has an invalid entry: {what}")
    return vals


def _int_list(cfg, key, default=_MISSING, check=None, what=""):
    vals = _get(cfg, key, list, default)
    if not all(isinstance(v, int) and not isinstance(v, bool) for v in vals) or not vals:
        raise ConfigError(f"field {key!r} must be a nonempty list of integers")
    if check is not None and not all(check(v) for v in vals):
        raise ConfigError(f"field {key!r} has an invalid entry: {what}")
    return vals


def _pos(v):
    return v > 0 and math.isfinite(v)


def _unit_open(v):
    return 0.0 < v < 1.0


MODEL_KINDS = ("brownian", "constant", "sine", "win", "closed")


def _model_spec(spec, key) -> dict:
    if not isinstance(spec, dict):
        raise ConfigError(f"field {key!r} must be an object with a 'kind'")
    kind = _get(spec, "kind", str, check=lambda k: k in MODEL_KINDS, what=f"one of {MODEL_KINDS}")
    out = {"kind": kind}
    if kind == "brownian":
        out["scale"] = _get(spec, "scale", float, 1.0, lambda v: v >= 0, "nonnegative")
        out["x0"] = _get(spec, "x0", float, 0.0)
    elif kind == "constant":
        out["x0"] = _get(spec, "x0", float, 0.0)
    elif kind == "sine":
        out["level"] = _get(spec, "level", float, 1.5)
        out["amplitude"] = _get(spec, "amplitude", float, 0.5)
        if not out["level"] > abs(out["amplitude"]):
            raise ConfigError(f"{key}: need level > |amplitude| for a positive volatility")
        out["x0"] = _get(spec, "x0", float, 0.0)
    elif kind == "win":
        out["p"] = _get(spec, "p", float, check=_pos, what="positive")
        out["x0"] = _get(spec, "x0", float, 0.5, _unit_open, "in (0, 1)")
    else:
        from .winmart import CLOSED_FORM_SHAPES
        out["name"] = _get(spec, "name", str, check=lambda n: n in CLOSED_FORM_SHAPES,
                           what=f"one of {sorted(CLOSED_FORM_SHAPES)}")
        out["x0"] = _get(spec, "x0", float, 0.5, _unit_open, "in (0, 1)")
    return out


def build_model(spec: dict) -> MartingaleModel:
    kind = spec["kind"]
    if kind == "brownian":
        if spec["scale"] == 0.0:
            return constant_martingale(spec["x0"])
        return brownian(spec["scale"], spec["x0"])
    if kind == "constant":
        return constant_martingale(spec["x0"])
    if kind == "sine":
        return MartingaleModel(spec["x0"], sine_field(spec["level"], spec["amplitude"]), tag="sine")
    from .winmart import competitor_model, solve_profile
    if kind == "win":
        return solve_profile(spec["p"]).model(spec["x0"])
    return competitor_model(spec["name"], spec["x0"])


DEFAULTS = {
    "converge": {"Q": {"kind": "sine"}, "P": {"kind": "brownian"}, "p": 1.0, "n_exponents": [2, 4, 6, 8],
                 "K": 10_000},
    "optimal": {"p": 0.5},
    "simulate": {"model": {"kind": "win", "p": 0.5, "x0": 0.5}, "K": 1000},
    "verify": {},
    "schrodinger": {},
    "filter": {},
}


def validate(command: str, cfg: dict) -> dict:
    """Return a fully populated parameter dict, raising ConfigError before any computation."""
    v: dict = {}
    if command == "converge":
        v["Q"] = _model_spec(_get(cfg, "Q", dict), "Q")
        v["P"] = _model_spec(_get(cfg, "P", dict, {"kind": "brownian"}), "P")
        v["p"] = _get(cfg, "p", float, check=_pos, what="positive")
        v["n_exponents"] = _int_list(cfg, "n_exponents", check=lambda n: 0 <= n <= 12, what="0 <= n <= 12")
        v["K"] = _get(cfg, "K", int, check=lambda k: k >= 2, what="at least 2")
        v["methods"] = _get(cfg, "methods", list, ["surrogate"])
        if not v["methods"] or any(m not in ("surrogate", "nested") for m in v["methods"]):
            raise ConfigError("field 'methods' must list 'surrogate' and/or 'nested'")
        v["K_outer"] = _get(cfg, "K_outer", int, 64, lambda k: k >= 2, "at least 2")
        v["M_inner"] = _get(cfg, "M_inner", int, 4096, lambda k: k >= 1, "positive")
        v["inner_substeps"] = _get(cfg, "inner_substeps", int, 4, lambda k: k >= 1, "positive")
        v["t_start"] = _get(cfg, "t_start", float, 0.0)
        v["t_end"] = _get(cfg, "t_end", float, 1.0)
        if not 0.0 <= v["t_start"] < v["t_end"] <= 1.0:
            raise ConfigError("need 0 <= t_start < t_end <= 1")
        for side in ("Q", "P"):
            if v[side]["kind"] in ("win", "closed") and v["t_end"] >= 1.0:
                raise ConfigError(f"{side}: win-martingale volatilities are unbounded near 1; set t_end < 1")
        if v["P"]["kind"] in ("win", "closed"):
            raise ConfigError("P: the reference volatility must be bounded")
    elif command == "optimal":
        v["p"] = _get(cfg, "p", float, check=_pos, what="positive")
        v["n_nodes"] = _get(cfg, "n_nodes", int, 4097, lambda n: n >= 17 and n % 2 == 1, "odd, at least 17")
        v["t_values"] = _float_list(cfg, "t_values", [0.0, 0.25, 0.5, 0.75], lambda t: 0.0 <= t < 1.0, "in [0, 1)")
        v["x_values"] = _float_list(cfg, "x_values", list(np.round(np.linspace(0.05, 0.95, 19), 12)),
                                    lambda x: 0.0 <= x <= 1.0, "in [0, 1]")
        v["residual_t"] = _float_list(cfg, "residual_t", list(np.round(np.linspace(0.05, 0.9, 20), 12)),
                                      lambda t: 0.0 < t < 1.0, "in (0, 1)")
        v["residual_x"] = _float_list(cfg, "residual_x", list(np.round(np.linspace(0.05, 0.95, 20), 12)),
                                      _unit_open, "in (0, 1)")
        v["residual_tol"] = _get(cfg, "residual_tol", float, 1e-3, _pos, "positive")
    elif command == "simulate":
        v["model"] = _model_spec(_get(cfg, "model", dict), "model")
        v["K"] = _get(cfg, "K", int, check=lambda k: k >= 1, what="positive")
        v["n_exponent"] = _get(cfg, "n_exponent", int, 8, lambda n: 0 <= n <= 14, "0 <= n <= 14")
        v["substeps"] = _get(cfg, "substeps", int, 16, lambda n: n >= 1, "positive")
        v["t_cut"] = _get(cfg, "t_cut", float, 1.0 - 2.0 ** -16, _unit_open, "in (0, 1)")
        v["t_end"] = _get(cfg, "t_end", float, 1.0, lambda t: 0.0 < t <= 1.0, "in (0, 1]")
        v["n_plot"] = _get(cfg, "n_plot", int, 20, lambda n: n >= 0, "nonnegative")
    elif command == "verify":
        v["K"] = _get(cfg, "K", int, 20_000, lambda k: k >= 2, "at least 2")
        v["value_cases"] = _get(cfg, "value_cases", list, [[0.5, 0.3], [3.0, 0.5]])
        for case in v["value_cases"]:
            if not (isinstance(case, list) and len(case) == 2 and _pos(float(case[0])) and _unit_open(float(case[1]))):
                raise ConfigError("field 'value_cases' must hold [p, x0] pairs with p > 0, x0 in (0, 1)")
        v["optimality_p"] = _float_list(cfg, "optimality_p", [0.5, 3.0], _pos, "positive")
        v["x0"] = _get(cfg, "x0", float, 0.5, _unit_open, "in (0, 1)")
        v["competitors"] = _get(cfg, "competitors", list, ["bass", "wright_fisher", "aldous"])
        v["claimed_optimal"] = _get(cfg, "claimed_optimal", str, "optimal")
        from .winmart import CLOSED_FORM_SHAPES
        for c in v["competitors"] + [v["claimed_optimal"]]:
            if c != "optimal" and c not in CLOSED_FORM_SHAPES and not str(c).startswith("profile:"):
                raise ConfigError(f"unknown competitor {c!r}")
        if v["claimed_optimal"] != "optimal" and v["claimed_optimal"] not in v["competitors"]:
            raise ConfigError("field 'claimed_optimal' must be 'optimal' or one of the competitors")
        v["convex_p"] = _float_list(cfg, "convex_p", [0.5, 1.0, 2.0], _pos, "positive")
        v["convex_t"] = _float_list(cfg, "convex_t", [0.25, 0.5, 0.75], _unit_open, "in (0, 1)")
        v["follmer_K"] = _get(cfg, "follmer_K", int, 10_000, lambda k: k >= 2, "at least 2")
    elif command == "schrodinger":
        v["t"] = _get(cfg, "t", float, 1.0, _pos, "positive")
        v["x0"] = _get(cfg, "x0", float, 0.5, _unit_open, "in (0, 1)")
        v["K"] = _get(cfg, "K", int, 20_000, lambda k: k >= 2, "at least 2")
        v["T_values"] = _float_list(cfg, "T_values", [5.0, 10.0, 20.0, 40.0], _pos, "positive")
        if any(T <= v["t"] for T in v["T_values"]):
            raise ConfigError("every bridge horizon in 'T_values' must exceed t")
        v["entropy_K"] = _get(cfg, "entropy_K", int, 10_000, lambda k: k >= 2, "at least 2")
        v["n_steps"] = _get(cfg, "n_steps", int, 512, lambda n: n >= 1, "positive")
        v["bins"] = _get(cfg, "bins", int, 60, lambda n: n >= 1, "positive")
    elif command == "filter":
        v["x0"] = _get(cfg, "x0", float, 0.5, _unit_open, "in (0, 1)")
        v["horizon"] = _get(cfg, "horizon", float, 4.0, _pos, "positive")
        v["K"] = _get(cfg, "K", int, 20_000, lambda k: k >= 2, "at least 2")
        v["n_steps"] = _get(cfg, "n_steps", int, 1024, lambda n: n >= 8 and n % 8 == 0, "a positive multiple of 8")
        v["force_u"] = _get(cfg, "force_u", int, None, lambda u: u in (0, 1), "0 or 1") if "force_u" in cfg else None
    unknown = sorted(set(cfg) - set(v) - {"command", "seed"})
    if unknown:
        raise ConfigError(f"unknown field(s) {unknown} for command {command!r}")
    return v


# ---------------------------------------------------------------- output helpers

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    return obj


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def write_table(path: Path, header, rows) -> None:
    lines = [" ".join(header) if path.suffix == ".dat" else ",".join(header)]
    sep = " " if path.suffix == ".dat" else ","
    for r in rows:
        lines.append(sep.join(repr(float(v)) if isinstance(v, (float, np.floating)) else str(v) for v in r))
    path.write_text("\n".join(lines) + "\n")


def write_gnuplot(path: Path, data: str, title: str, xlabel: str, ylabel: str, plots) -> None:
    cmds = ", ".join(f"'{data}' using {u} with {w} title '{t}'" for u, w, t in plots)
    path.write_text(f"set title '{title}'\nset xlabel '{xlabel}'\nset ylabel '{ylabel}'\nset key left top\n"
                    f"plot {cmds}\n")


# ---------------------------------------------------------------- commands

def cmd_converge(v: dict, seed: int, workers: int, out: Path) -> dict:
    from .divergence import convergence_table, d_Np_nested_mc

    Q, P = build_model(v["Q"]), build_model(v["P"])
    report = convergence_table(Q, P, v["p"], v["n_exponents"], v["K"], seed,
                               t_start=v["t_start"], t_end=v["t_end"], workers=workers)
    if "surrogate" not in v["methods"]:
        report.rows = []
    if "nested" in v["methods"]:
        for n in sorted(set(v["n_exponents"])):
            est, se = d_Np_nested_mc(Q, P, v["p"], n, v["K_outer"], v["M_inner"], v["inner_substeps"], seed,
                                     t_start=v["t_start"], t_end=v["t_end"], workers=workers)
            rel = abs(est - report.target) / abs(report.target) if report.target else abs(est)
            report.rows.append({"N": 1 << n, "method": "nested", "scaled_value": est, "stderr": se, "rel_error": rel})
    report.to_csv(out / "converge.csv")
    payload = report.to_dict()
    payload["config"] = v
    write_json(out / "converge.json", payload)
    write_table(out / "converge.dat", ["N", "scaled_value", "stderr", "target"],
                [(r["N"], r["scaled_value"], r["stderr"], report.target) for r in report.rows])
    write_gnuplot(out / "converge.gp", "converge.dat", "scaled discrete divergence", "N", "value",
                  [("1:2:3", "yerrorbars", "scaled D^{N,p}"), ("1:4", "lines", "target")])
    return {"pass": True, "failures": [], "anchor": report.anchor}


def cmd_optimal(v: dict, seed: int, workers: int, out: Path) -> dict:
    from .winmart import residual_grid, sigma_bar, solve_profile

    prof = solve_profile(v["p"], v["n_nodes"])
    prof.to_csv(out / "profile.csv")
    prof.to_json(out / "profile.json")
    rows = [(t, x, float(sigma_bar(prof, t, x))) for t in v["t_values"] for x in v["x_values"]]
    write_table(out / "sigma.csv", ["t", "x", "sigma"], rows)
    res = residual_grid(prof, np.asarray(v["residual_t"]), np.asarray(v["residual_x"]))
    rrows = []
    for i, t in enumerate(res["t"]):
        for j, x in enumerate(res["x"]):
            rrows.append((float(t), float(x), float(res["pmd"][i, j]),
                          float(res["hjb"][i, j]) if res["hjb"] is not None else float("nan")))
    write_table(out / "residuals.csv", ["t", "x", "pmd", "hjb"], rrows)
    failures = []
    if res["max_abs_pmd"] >= v["residual_tol"]:
        failures.append({"check": "pmd_residual", "value": res["max_abs_pmd"], "tol": v["residual_tol"]})
    if res["max_abs_hjb"] is not None and res["max_abs_hjb"] >= v["residual_tol"]:
        failures.append({"check": "hjb_residual", "value": res["max_abs_hjb"], "tol": v["residual_tol"]})
    summary = {"anchor": "explicit optimal win-martingale profile and its value function",
               "header": prof.header(), "max_abs_pmd": res["max_abs_pmd"], "max_abs_hjb": res["max_abs_hjb"],
               "failures": failures, "pass": not failures, "config": v}
    write_json(out / "optimal.json", summary)
    return summary


def cmd_simulate(v: dict, seed: int, workers: int, out: Path) -> dict:
    from .sde import SimConfig, simulate, win_config

    model = build_model(v["model"])
    grid = make_dyadic_grid(0.0, v["t_end"], v["n_exponent"])
    if v["model"]["kind"] in ("win", "closed") and v["t_end"] == 1.0:
        cfg = win_config(t_cut=v["t_cut"], substeps_per_cell=v["substeps"])
    else:
        cfg = SimConfig(substeps_per_cell=v["substeps"])
    ens = simulate(model, grid, v["K"], seed, cfg, workers=workers)
    ens.save(out / "ensemble.swpe")
    n_plot = min(v["n_plot"], ens.K)
    rows = [(float(t),) + tuple(float(x) for x in ens.states[:n_plot, i]) for i, t in enumerate(grid.points)]
    write_table(out / "paths.dat", ["t"] + [f"path{k}" for k in range(n_plot)], rows)
    if n_plot:
        write_gnuplot(out / "paths.gp", "paths.dat", f"sample paths of {ens.model_tag}", "t", "X_t",
                      [(f"1:{k + 2}", "lines", "") for k in range(n_plot)])
    term = ens.terminal
    summary = {"anchor": "sample paths of a martingale model", "model": v["model"], "model_tag": ens.model_tag,
               "K": ens.K, "n_cells": grid.n_cells, "terminal_mean": float(np.mean(term)),
               "terminal_std": float(np.std(term)), "pass": True, "failures": [], "config": v}
    write_json(out / "simulate.json", summary)
    return summary


def cmd_verify(v: dict, seed: int, workers: int, out: Path) -> dict:
    from .divergence import follmer_chain_check
    from .sde import SimConfig
    from .winmart import convex_order_check, mc_value_check, optimality_comparison, solve_profile

    checks = []
    for p, x0 in v["value_cases"]:
        r = mc_value_check(solve_profile(float(p)), 0.0, float(x0), v["K"], seed=seed, workers=workers)
        checks.append({"check": f"value p={float(p):g} x0={float(x0):g}",
                       "anchor": "value function of the optimal win-martingale",
                       "margin": 3.0 * r["stderr"] - r["gap"], "pass": r["pass"], "detail": r})
    for p in v["optimality_p"]:
        r = optimality_comparison(p, v["x0"], tuple(v["competitors"]), v["K"], seed=seed, workers=workers,
                                  claimed_optimal=v["claimed_optimal"])
        margins = [row.get("margin", float("nan")) for row in r["rows"]]
        checks.append({"check": f"optimality p={p:g}", "anchor": "optimality of the explicit profile",
                       "margin": min(margins) if margins else float("nan"), "pass": r["pass"], "detail": r})
    r = convex_order_check(tuple(v["convex_p"]), tuple(v["convex_t"]), K=v["K"], seed=seed, workers=workers)
    checks.append({"check": "convex order", "anchor": "monotonicity of optimal volatilities in p",
                   "margin": min(r["pointwise_min_gaps"]), "pass": r["pass"], "detail": r})
    sine = MartingaleModel(0.0, sine_field(), tag="sine")
    grid = make_dyadic_grid(0.0, 1.0, 8)
    r = follmer_chain_check(sine, v["follmer_K"], grid, seed, SimConfig(substeps_per_cell=4), workers)
    checks.append({"check": "follmer chain", "anchor": "adapted Wasserstein, specific Wasserstein and entropy chain",
                   "margin": r["margin"] - 3.0 * r["margin_stderr"], "pass": r["strict_margin"], "detail": r})
    failures = [c["check"] for c in checks if not c["pass"]]
    summary = {"checks": checks, "failures": failures, "pass": not failures, "config": v}
    write_json(out / "verify.json", summary)
    write_table(out / "verify.csv", ["check", "pass", "margin"],
                [(c["check"].replace(",", ";"), int(c["pass"]), float(c["margin"])) for c in checks])
    return summary


def cmd_schrodinger(v: dict, seed: int, workers: int, out: Path) -> dict:
    from scipy.special import logit
    from .sde import SimConfig, simulate, t_clock
    from .core import TimeGrid
    from .schrodinger import (CPathConfig, bridge_drift_gap_fit, density_table, entropy_gap_table,
                              logit_change_check)
    from .winmart import solve_profile

    lc = logit_change_check(v["K"], seed, v["x0"], v["t"], workers=workers)
    grid = TimeGrid(t_clock(np.linspace(0.0, v["t"], 65)))
    ens = simulate(solve_profile(0.5).model(v["x0"]), grid, v["K"], seed, SimConfig(substeps_per_cell=16),
                   workers=workers)
    y = ens.states[:, -1]
    y = y[(y > 0) & (y < 1)]
    table = density_table(v["t"], logit(y), float(logit(v["x0"])), v["bins"])
    write_table(out / "density_C.csv", ["z", "model_density", "empirical_density"], table.tolist())
    eg = entropy_gap_table(tuple(v["T_values"]), 1.0, v["entropy_K"], CPathConfig(v["n_steps"]), seed)
    write_table(out / "entropy_gap.csv", ["T", "estimate", "stderr"],
                [(r["T"], r["estimate"], r["stderr"]) for r in eg])
    fit = bridge_drift_gap_fit()
    ests = [r["estimate"] for r in eg]
    decreasing = all(b < a for a, b in zip(ests, ests[1:]))
    failures = [name for name, ok in (("ks", lc["ks_ok"]), ("qv", lc["qv_ok"]), ("y_mean", lc["y_mean_ok"]),
                                      ("entropy_decreasing", decreasing)) if not ok]
    summary = {"anchor": "logit coordinates of the p = 1/2 optimizer and two-point Brownian bridges",
               "logit_change": lc, "entropy_gap": eg, "entropy_gap_decreasing": decreasing, "drift_gap_fit": fit,
               "failures": failures, "pass": not failures, "config": v}
    write_json(out / "schrodinger.json", summary)
    return summary


def cmd_filter(v: dict, seed: int, workers: int, out: Path) -> dict:
    from .schrodinger import FilterConfig, filtering_experiment

    r = filtering_experiment(v["x0"], v["horizon"], v["K"], FilterConfig(n_steps=v["n_steps"]), seed,
                             force_u=v["force_u"])
    failures = [k for k, ok in r["checks"].items() if not ok]
    summary = {"anchor": "filtering interpretation of the p = 1/2 optimizer", "report": r,
               "failures": failures, "pass": not failures, "config": v}
    write_json(out / "filter.json", summary)
    return summary


HANDLERS = {"converge": cmd_converge, "optimal": cmd_optimal, "simulate": cmd_simulate, "verify": cmd_verify,
            "schrodinger": cmd_schrodinger, "filter": cmd_filter}


# ---------------------------------------------------------------- entry point

def _seed(text: str) -> int:
    val = int(text)
    if not 0 <= val < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return val


def _workers(text: str) -> int:
    val = int(text)
    if val < 1:
        raise argparse.ArgumentTypeError("workers must be positive")
    return val


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=argparse.SUPPRESS, help="JSON experiment configuration")
    common.add_argument("--seed", type=_seed, default=argparse.SUPPRESS, help="master seed (u64)")
    common.add_argument("--workers", type=_workers, default=argparse.SUPPRESS,
                        help="Monte Carlo worker threads (does not change results)")
    common.add_argument("--out", type=Path, default=argparse.SUPPRESS, help="output directory")
    parser = argparse.ArgumentParser(prog="specwass", parents=[common],
                                     description="Specific Wasserstein divergences and optimal win-martingales.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {"converge": "scaled discrete divergences against their closed-form limit",
             "optimal": "solve the p-optimal profile and tabulate volatility and residuals",
             "simulate": "simulate and persist a path ensemble",
             "verify": "value, optimality, convex-order and entropy-chain checks",
             "schrodinger": "logit coordinates, density of C and bridge entropy gaps",
             "filter": "Bernoulli-drift filtering experiment"}
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def _load_config(path: Path | None, command: str) -> dict:
    if path is None:
        return dict(DEFAULTS[command])
    try:
        cfg = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    if cfg.get("command") != command:
        raise ConfigError(f"config field 'command' is {cfg.get('command')!r}, expected {command!r}")
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    command = args.command
    workers = getattr(args, "workers", 1)
    try:
        cfg = _load_config(getattr(args, "config", None), command)
        seed = getattr(args, "seed", None)
        if seed is None:
            seed = _get(cfg, "seed", int, 0, lambda s: 0 <= s < 2 ** 64, "unsigned 64-bit")
        params = validate(command, cfg)
    except ConfigError as exc:
        print(f"specwass: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    env_out = os.environ.get("SPECWASS_OUT")
    out = Path(env_out) if env_out else getattr(args, "out", Path("specwass_out"))
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    try:
        summary = HANDLERS[command](params, seed, workers, out)
    except (DomainError, UnsupportedError) as exc:
        print(f"specwass: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, InconsistencyError, FloatingPointError) as exc:
        print(f"specwass: numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    write_json(out / "meta.json", {"command": command, "seed": seed, "workers": workers,
                                   "started": started, "elapsed_seconds": time.time() - started})
    if summary.get("failures"):
        print(json.dumps({"command": command, "failures": summary["failures"]}))
        return EXIT_FAIL
    print(json.dumps({"command": command, "pass": True, "out": str(out)}))
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
