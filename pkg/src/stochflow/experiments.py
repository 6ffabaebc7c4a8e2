"""Scripted experiments over the solver stack.

Each experiment is a pure function of its keyword arguments: runs are
seeded, sweep points are evaluated in a fixed order, and the emitted
CSV files are byte-reproducible.  Common random numbers are used across
every viscosity sweep (the same Brownian paths drive every sweep
point), which keeps parameter differences smooth at finite sample
count.  Output here is delimited text only; rendering lives with the
command-line layer.
"""

from __future__ import annotations

import os
from dataclasses import replace

import numpy as np

from .diagnostics import fit_rate
from .diffusive import DiffusiveConfig, solve_diffusive
from .errors import StochflowError
from .flowmap import _increments_block, integrate_flow_block
from .grid import Field, TorusGrid
from .reference import reference_nse_solve, shear_mode, taylor_green
from .stochastic import (
    PATH_BATCH,
    StochasticConfig,
    _kahan_add,
    reconstruct_block,
    solve,
    solve_euler,
    solve_windowed,
)

__all__ = [
    "inviscid_limit_experiment",
    "contraction_experiment",
    "equivalence_experiment",
    "mc_scaling_experiment",
    "DEFAULT_GRID_N",
    "DEFAULT_LENGTH",
]

DEFAULT_GRID_N = 32
DEFAULT_LENGTH = 2.0 * np.pi

_SCHEMA_HEADER = "nu,t,err_l2,err_c0,mc_sigma,exponent_fit,r2"


def _ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path


def _check_sweep(name, values):
    """Sweep grids must be positive and strictly increasing."""
    vals = [float(v) for v in values]
    if not vals:
        raise ValueError(f"{name} sweep is empty")
    if any((not np.isfinite(v)) or v <= 0.0 for v in vals):
        raise ValueError(f"{name} sweep values must be positive")
    if any(b <= a for a, b in zip(vals, vals[1:])):
        raise ValueError(f"{name} sweep values must be strictly increasing")


def _initial_data(grid, init, amplitude):
    if init == "taylor_green":
        return taylor_green(grid, amplitude)
    if init == "shear":
        return shear_mode(grid, amplitude)
    if init == "constant":
        vec = np.zeros(grid.dim)
        vec[0] = amplitude
        return Field(grid, np.broadcast_to(vec, grid.shape + (grid.dim,)).copy())
    if init == "zero":
        return Field(grid, np.zeros(grid.shape + (grid.dim,)))
    raise ValueError(f"unsupported initial data {init!r}")


def _write_rows(path, header, rows):
    """Write one schema-versioned CSV; floats use shortest repr."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# schema=1\n")
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(_cell(x) for x in row) + "\n")


def _cell(x):
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _rms(values):
    return float(np.sqrt((values**2).sum(axis=-1).mean()))


def _sup(values):
    return float(np.sqrt((values**2).sum(axis=-1)).max())


def _relative_errors(u_values, ref_values):
    scale_rms = max(_rms(ref_values), 1e-300)
    scale_sup = max(_sup(ref_values), 1e-300)
    diff = u_values - ref_values
    return _rms(diff) / scale_rms, _sup(diff) / scale_sup


def inviscid_limit_experiment(
    out_dir,
    nus=(1e-4, 3e-4, 1e-3, 3e-3, 1e-2),
    t_final=0.25,
    t_probe_nu=1e-3,
    n=DEFAULT_GRID_N,
    length=DEFAULT_LENGTH,
    dt=0.025,
    samples=2048,
    seed=7,
    picard_tol=1e-7,
    picard_max=30,
    amplitude=1.0,
    init="taylor_green",
):
    """Viscosity (and time) convergence toward the inviscid solution.

    Solves the stochastic pipeline for each ``nu`` with identical
    Brownian paths, solves the noiseless branch once, and fits the
    error at ``t_final`` against ``nu``; the slice errors of the
    ``t_probe_nu`` run against time give the companion time-rate fit.
    Writes ``inviscid_nu.csv`` and ``inviscid_t.csv``.
    """
    _check_sweep("nu", nus)
    _ensure_dir(out_dir)
    grid = TorusGrid(dim=2, n=n, length=length)
    u0 = _initial_data(grid, init, amplitude)

    base = StochasticConfig(
        nu=0.0, dt=dt, t_final=t_final, samples=samples, seed=seed,
        picard_tol=picard_tol, picard_max=picard_max,
    )
    euler_hist, _ = solve_euler(u0, base)
    scale = max(_sup(u0.values), 1e-300)

    runs, reports, failures = {}, {}, {}
    for nu in nus:
        try:
            hist, rep = solve(u0, replace(base, nu=float(nu)))
        except StochflowError as err:  # keep the rest of the sweep alive
            failures[float(nu)] = str(err)
            continue
        runs[float(nu)] = hist
        reports[float(nu)] = rep

    nan = float("nan")
    errs_l2, errs_c0, sigmas = [], [], []
    for nu in nus:
        if float(nu) in failures:
            errs_l2.append(nan)
            errs_c0.append(nan)
            sigmas.append(nan)
            continue
        hist = runs[float(nu)]
        e2, e0 = _relative_errors(hist.slices[-1], euler_hist.slices[-1])
        errs_l2.append(e2)
        errs_c0.append(e0)
        se = reports[float(nu)].diagnostics["mc_se_l2_final"]
        sigmas.append(se / max(_rms(euler_hist.slices[-1]), 1e-300))

    good = [
        (float(nu), errs_l2[i])
        for i, nu in enumerate(nus)
        if float(nu) not in failures
    ]
    degenerate = not good or max(e for _, e in good) <= 1e-13
    if degenerate or len(good) < 4:
        fit = None
        degenerate = True
    else:
        fit = fit_rate(np.asarray([g[0] for g in good]),
                       np.asarray([g[1] for g in good]))
    exponent = nan if fit is None else fit.exponent
    r2 = nan if fit is None else fit.r2

    rows = [
        (nu, t_final, errs_l2[i], errs_c0[i], sigmas[i], exponent, r2)
        for i, nu in enumerate(nus)
    ]
    _write_rows(os.path.join(out_dir, "inviscid_nu.csv"), _SCHEMA_HEADER, rows)

    # time sweep at one fixed viscosity, reusing the stored slices
    t_values = [round(f * t_final, 12) for f in (0.2, 0.4, 0.6, 0.8, 1.0)]
    t_rows, t_errs = [], []
    if float(t_probe_nu) in runs:
        probe = runs[float(t_probe_nu)]
        se_slices = reports[float(t_probe_nu)].diagnostics["mc_se_l2"]
        for t in t_values:
            k = int(round(t / dt))
            e2, e0 = _relative_errors(probe.slices[k], euler_hist.slices[k])
            sigma = se_slices[k] / max(_rms(euler_hist.slices[k]), 1e-300)
            t_rows.append([t_probe_nu, t, e2, e0, sigma])
            t_errs.append(e2)
    else:
        for t in t_values:
            t_rows.append([t_probe_nu, t, nan, nan, nan])
            t_errs.append(nan)
    if degenerate or not t_errs or min(t_errs) <= 1e-13 or any(
        not np.isfinite(e) for e in t_errs
    ):
        t_fit = None
    else:
        t_fit = fit_rate(np.asarray(t_values), np.asarray(t_errs))
    t_exponent = nan if t_fit is None else t_fit.exponent
    t_r2 = nan if t_fit is None else t_fit.r2
    for row in t_rows:
        row.extend([t_exponent, t_r2])
    _write_rows(os.path.join(out_dir, "inviscid_t.csv"), _SCHEMA_HEADER, t_rows)

    return {
        "nus": [float(v) for v in nus],
        "err_l2": errs_l2,
        "err_c0": errs_c0,
        "mc_sigma": sigmas,
        "nu_exponent": exponent,
        "nu_r2": r2,
        "t_values": t_values,
        "t_err_l2": t_errs,
        "t_exponent": t_exponent,
        "t_r2": t_r2,
        "degenerate": degenerate,
        "failures": failures,
        "scale": scale,
    }


def contraction_experiment(
    out_dir,
    horizons=(0.05, 0.1, 0.2),
    n=DEFAULT_GRID_N,
    length=DEFAULT_LENGTH,
    dt=0.005,
    nu=0.01,
    samples=256,
    seed=11,
    picard_tol=1e-11,
    picard_max=30,
    init="shear",
    amplitude=1.0,
):
    """Per-iteration residuals of the fixed-point map across horizons.

    At frozen paths the sweep map is deterministic, so the residual
    sequence decays geometrically once the horizon is small enough.
    Writes ``contraction.csv`` with one row per (horizon, iteration).
    """
    _check_sweep("horizon", horizons)
    _ensure_dir(out_dir)
    grid = TorusGrid(dim=2, n=n, length=length)
    u0 = _initial_data(grid, init, amplitude)

    rows = []
    results = {}
    for t_final in horizons:
        cfg = StochasticConfig(
            nu=nu, dt=dt, t_final=float(t_final), samples=samples, seed=seed,
            picard_tol=picard_tol, picard_max=picard_max,
        )
        hist, rep = solve(u0, cfg)
        res = rep.residuals
        ratios = [res[i + 1] / res[i] for i in range(len(res) - 1)]
        results[float(t_final)] = {
            "residuals": res,
            "ratios": ratios,
            "sup_speed": rep.diagnostics["sup_speed"],
        }
        for i, r in enumerate(res):
            ratio = ratios[i - 1] if i >= 1 else float("nan")
            rows.append((t_final, i + 1, r, ratio))
    _write_rows(
        os.path.join(out_dir, "contraction.csv"),
        "t_final,iter,residual_c0,ratio",
        rows,
    )
    smallest = results[float(min(horizons))]
    tail = smallest["ratios"][1:]
    results["ok"] = bool(tail) and max(tail) <= 0.8
    return results


def equivalence_experiment(
    out_dir,
    nu=0.02,
    t_final=0.25,
    n=DEFAULT_GRID_N,
    length=DEFAULT_LENGTH,
    dt_stochastic=0.025,
    dt_diffusive=1e-3,
    dt_reference=2.5e-4,
    samples=4096,
    seed=13,
    picard_tol=1e-7,
    picard_max=30,
    init="taylor_green",
    amplitude=1.0,
):
    """Three formulations of the same flow, pairwise compared.

    The Monte-Carlo run must agree with the conventional solver within
    its own sampling error; the deterministic Lagrangian run must agree
    deterministically.  Writes ``equivalence.csv``.
    """
    _ensure_dir(out_dir)
    grid = TorusGrid(dim=2, n=n, length=length)
    u0 = _initial_data(grid, init, amplitude)

    scfg = StochasticConfig(
        nu=nu, dt=dt_stochastic, t_final=t_final, samples=samples, seed=seed,
        picard_tol=picard_tol, picard_max=picard_max,
    )
    stoch = solve_windowed(u0, scfg)
    u_stoch = stoch.history.slices[-1]
    se_abs = stoch.reports[-1].diagnostics["mc_se_l2_final"]

    dcfg = DiffusiveConfig(
        nu=nu, dt=dt_diffusive, t_final=t_final,
        picard_tol=picard_tol, picard_max=picard_max,
    )
    diff = solve_diffusive(u0, dcfg)
    u_diff = diff.history.slices[-1]

    ref = reference_nse_solve(u0, nu, t_final,
                              int(round(t_final / dt_reference)))
    u_ref = ref.slices[-1]

    scale_rms = max(_rms(u_ref), 1e-300)
    sigma = se_abs / scale_rms
    pairs = {
        "stochastic_vs_reference": _relative_errors(u_stoch, u_ref),
        "diffusive_vs_reference": _relative_errors(u_diff, u_ref),
        "stochastic_vs_diffusive": _relative_errors(u_stoch, u_diff),
    }
    rows = []
    for name, (e2, e0) in pairs.items():
        threshold = 3.0 * sigma if name.startswith("stochastic") else 1e-3
        rows.append((name, nu, t_final, e2, e0, sigma, threshold))
    _write_rows(
        os.path.join(out_dir, "equivalence.csv"),
        "pair,nu,t,err_l2,err_c0,mc_sigma,threshold",
        rows,
    )
    return {
        "pairs": {k: {"l2": v[0], "c0": v[1]} for k, v in pairs.items()},
        "mc_sigma": sigma,
        "stochastic_ok": pairs["stochastic_vs_reference"][0] <= 3.0 * sigma,
        "diffusive_ok": pairs["diffusive_vs_reference"][0] <= 1e-3,
    }


def _fresh_path_average(grid, history, u0_values, nu, samples, seed,
                        interp_kind="lagrange"):
    """Average of the reconstruction at the final slice over ``samples``
    freshly seeded paths driven by a frozen drift history."""
    n_steps = history.times.size - 1
    acc = np.zeros(grid.shape + (grid.dim,))
    comp = np.zeros_like(acc)
    total = 0
    dt = float(history.times[1] - history.times[0])
    for start in range(0, samples, PATH_BATCH):
        indices = np.arange(start, min(start + PATH_BATCH, samples))
        increments = _increments_block(seed, indices, dt, n_steps, grid.dim)
        lams = integrate_flow_block(grid, history, increments, nu=nu)
        out = reconstruct_block(grid, u0_values, lams[-1],
                                interp_kind=interp_kind)
        if not np.all(out["ok"]):
            raise RuntimeError("path failed certification in scaling probe")
        _kahan_add(acc, comp, np.sum(out["w"], axis=0))
        total += len(indices)
    return acc / total


def mc_scaling_experiment(
    out_dir,
    sample_grid=(64, 256, 1024, 4096),
    replicates=8,
    nu=0.02,
    t_final=0.25,
    n=DEFAULT_GRID_N,
    length=DEFAULT_LENGTH,
    dt=0.025,
    drift_samples=1024,
    seed=17,
    picard_tol=1e-7,
    picard_max=30,
):
    """Sampling-error decay of the path average at a frozen drift.

    One converged run fixes the drift; independent replicate ensembles
    of each size then re-average the reconstruction at the final time,
    and the spread across replicates is fitted against the ensemble
    size.  Writes ``mc_scaling.csv``.
    """
    _check_sweep("m_samples", sample_grid)
    if replicates < 2:
        raise ValueError("replicates must be at least 2")
    _ensure_dir(out_dir)
    grid = TorusGrid(dim=2, n=n, length=length)
    u0 = taylor_green(grid, 1.0)
    cfg = StochasticConfig(
        nu=nu, dt=dt, t_final=t_final, samples=drift_samples, seed=seed,
        picard_tol=picard_tol, picard_max=picard_max,
    )
    history, _ = solve(u0, cfg)
    u0_values = history.slices[0]

    scale = max(_rms(history.slices[-1]), 1e-300)
    sigmas = []
    rows = []
    for m in sample_grid:
        finals = []
        for rep in range(replicates):
            rep_seed = seed + 7919 * (rep + 1)
            finals.append(_fresh_path_average(
                grid, history, u0_values, nu, int(m), rep_seed,
                interp_kind=cfg.interp_kind,
            ))
        stack = np.stack(finals)
        center = stack.mean(axis=0)
        spread = np.sqrt(np.mean([
            _rms(f - center) ** 2 for f in finals
        ]))
        sigma = float(spread) / scale
        sigmas.append(sigma)
        rows.append([int(m), sigma])
    fit = fit_rate(np.asarray(sample_grid, dtype=float), np.asarray(sigmas))
    for row in rows:
        row.extend([fit.exponent, fit.r2])
    _write_rows(
        os.path.join(out_dir, "mc_scaling.csv"),
        "m_samples,sigma_l2,exponent_fit,r2",
        rows,
    )
    return {
        "sample_grid": [int(m) for m in sample_grid],
        "sigma_l2": sigmas,
        "exponent": fit.exponent,
        "r2": fit.r2,
    }
