"""Monte-Carlo stochastic Lagrangian solver.

One Picard sweep freezes an ensemble of Brownian paths, integrates the
noisy flow of the current drift iterate for each path, inverts the map
slice by slice, pulls the initial velocity back along ``A = I + ell``
and applies the Weber reconstruction, then averages across paths:

    u_next(t) = mean_m  W( u0 o A_m(t), ell_m(t) ).

Paths are keyed by ``(seed, path_index)`` and reused across sweeps
(common random numbers), so at finite sample count the fixed point is a
well-defined deterministic object.  The path average runs over fixed
256-path batches reduced in index order with compensated summation;
worker threads change wall time only, never bytes.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .errors import NoConvergence, RemapRequired, StochflowError
from .flowmap import (
    INVERT_CERT_CAP,
    INVERT_MAX_ITER,
    INVERT_TOL,
    _increments_block,
    _invert_block,
    integrate_flow_block,
)
from .grid import Field, div_values, leray_values, operator_norm
from .histories import ConvergenceReport, VelocityHistory
from .interp import interp_values
from .weber import gradT_batched, weber_batched

__all__ = [
    "StochasticConfig",
    "PATH_BATCH",
    "reconstruct_velocity",
    "reconstruct_block",
    "picard_step",
    "solve",
    "solve_euler",
    "solve_windowed",
    "WindowedResult",
    "worker_count",
]

# Fixed internal batch width: the reduction tree (per-batch pairwise sum,
# then compensated summation across batches in index order) must not
# depend on sample count rounding or on how many workers run.
PATH_BATCH = 256


@dataclass(frozen=True)
class StochasticConfig:
    """Run parameters for the stochastic fixed-point solver."""

    nu: float
    dt: float
    t_final: float
    samples: int
    seed: int = 0
    picard_tol: float = 1e-8
    picard_max: int = 40
    remap_threshold: float = 0.4
    interp_kind: str = "lagrange"

    def __post_init__(self):
        if self.nu < 0:
            raise ValueError("nu must be nonnegative")
        if not (0 < self.dt <= self.t_final):
            raise ValueError("need 0 < dt <= t_final")
        if self.samples < 1:
            raise ValueError("need at least one sample path")
        if not (0 < self.remap_threshold < 0.5):
            raise ValueError("remap_threshold must lie in (0, 1/2)")
        if self.picard_tol <= 0 or self.picard_max < 1:
            raise ValueError("need picard_tol > 0 and picard_max >= 1")
        steps = self.t_final / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise ValueError("dt must divide t_final evenly")

    @property
    def n_steps(self):
        return int(round(self.t_final / self.dt))

    def times(self):
        return np.linspace(0.0, self.t_final, self.n_steps + 1)


def worker_count(n_tasks):
    """Thread cap: STOCHFLOW_THREADS if set, else the CPU count, never
    more than the number of tasks."""
    env = os.environ.get("STOCHFLOW_THREADS", "").strip()
    if env:
        try:
            cap = int(env)
        except ValueError:
            raise StochflowError(
                f"STOCHFLOW_THREADS must be an integer, got {env!r}"
            ) from None
        if cap < 1:
            raise StochflowError("STOCHFLOW_THREADS must be >= 1")
    else:
        cap = os.cpu_count() or 1
    return max(1, min(cap, n_tasks))


def reconstruct_block(grid, u0_values, lam_batch, interp_kind="lagrange",
                      ell0=None, cert_cap=INVERT_CERT_CAP):
    """Reconstruct one time slice for a batch of paths.

    ``lam_batch`` is ``(B,) + shape + (dim,)``.  Returns a dict with the
    per-path reconstructions ``w`` (failed paths zeroed), the
    back-to-labels displacements ``ell``, the boolean success mask
    ``ok``, and per-path gradient certificates ``sup_grad_lam`` /
    ``sup_grad_ell``.
    """
    nbatch = lam_batch.shape[0]
    cert = operator_norm(gradT_batched(grid, lam_batch))
    cert = cert.reshape(nbatch, -1).max(axis=1)
    ok = cert < cert_cap

    ell = np.zeros_like(lam_batch)
    w = np.zeros_like(lam_batch)
    sup_ell = np.zeros(nbatch)
    if np.any(ok):
        seed_ell = None if ell0 is None else ell0[ok]
        ells, _ = _invert_block(
            grid, lam_batch[ok], tol=INVERT_TOL, max_iter=INVERT_MAX_ITER,
            interp_kind=interp_kind, ell0=seed_ell,
        )
        ell[ok] = ells
        gt = gradT_batched(grid, ells)
        ge = operator_norm(gt)
        sup_ell[ok] = ge.reshape(ells.shape[0], -1).max(axis=1)
        points = grid.coords.reshape(-1, grid.dim) + ells.reshape(
            ells.shape[0], -1, grid.dim
        )
        pulled = interp_values(
            grid, u0_values, points.reshape(-1, grid.dim), kind=interp_kind
        ).reshape(ells.shape)
        w[ok] = weber_batched(grid, pulled, ells, gradT_ell=gt)
    return {
        "w": w,
        "ell": ell,
        "ok": ok,
        "sup_grad_lam": cert,
        "sup_grad_ell": sup_ell,
    }


def reconstruct_velocity(u0, traj, interp_kind="lagrange"):
    """Single-path reconstruction ``W(u0 o A, ell)`` at every stored slice.

    Raises :class:`NotInvertible` tagged with the offending time if a
    slice fails the gradient certificate.
    """
    from .errors import NotInvertible

    grid = traj.grid
    if u0.grid != grid:
        raise ValueError("initial data and trajectory grids differ")
    slices = np.zeros_like(traj.lams)
    slices[0] = leray_values(grid, u0.values)
    ell_prev = None
    for k in range(1, traj.times.size):
        out = reconstruct_block(
            grid, u0.values, traj.lams[k][None], interp_kind=interp_kind,
            ell0=ell_prev,
        )
        if not out["ok"][0]:
            raise NotInvertible(
                out["sup_grad_lam"][0], INVERT_CERT_CAP,
                time=float(traj.times[k]),
            )
        slices[k] = out["w"][0]
        ell_prev = out["ell"]
    return VelocityHistory(
        grid=grid, times=traj.times.copy(), slices=slices,
        interp_kind=interp_kind,
    )


def _batch_contribution(grid, history, u0_values, increments, cfg):
    """Integrate and reconstruct one path batch over the whole window.

    Returns per-slice batch sums (pairwise within the batch — the inner
    reduction is deterministic), squared sums for the variance
    estimate, success counts, gradient suprema, and the first slice
    index (or None) at which ``sup |grad ell|`` crossed the remap
    threshold; reconstruction stops at that slice.
    """
    lams = integrate_flow_block(grid, history, increments, cfg.nu)
    n_slices = lams.shape[0]
    nbatch = increments.shape[0]
    shape = grid.shape + (grid.dim,)
    w_sum = np.zeros((n_slices,) + shape)
    w_sumsq = np.zeros((n_slices,) + shape)
    counts = np.zeros(n_slices, dtype=np.int64)
    sup_lam = np.zeros(n_slices)
    sup_ell = np.zeros(n_slices)
    trip = None

    u0_proj = leray_values(grid, u0_values)
    w_sum[0] = nbatch * u0_proj
    w_sumsq[0] = nbatch * u0_proj**2
    counts[0] = nbatch

    ell_prev = None
    ell_prev2 = None
    for k in range(1, n_slices):
        if ell_prev is None:
            guess = None
        elif ell_prev2 is None:
            guess = ell_prev
        else:
            # warm start: displacement extrapolated linearly in time
            guess = 2.0 * ell_prev - ell_prev2
        out = reconstruct_block(
            grid, u0_values, lams[k], interp_kind=cfg.interp_kind,
            ell0=guess,
        )
        sup_lam[k] = float(out["sup_grad_lam"].max())
        sup_ell[k] = float(out["sup_grad_ell"].max())
        counts[k] = int(out["ok"].sum())
        w_sum[k] = np.sum(out["w"], axis=0)
        w_sumsq[k] = np.sum(out["w"] ** 2, axis=0)
        ell_prev2 = ell_prev
        ell_prev = out["ell"]
        if sup_ell[k] > cfg.remap_threshold:
            trip = k
            break
    return {
        "w_sum": w_sum,
        "w_sumsq": w_sumsq,
        "counts": counts,
        "sup_lam": sup_lam,
        "sup_ell": sup_ell,
        "trip": trip,
    }


def _kahan_add(acc, comp, term):
    y = term - comp
    t = acc + y
    comp[...] = (t - acc) - y
    acc[...] = t


def picard_step(history, cfg):
    """One sweep of the fixed-point map at frozen Brownian paths.

    Returns ``(new_history, info)`` where ``info`` carries Monte-Carlo
    and trust-region diagnostics for the sweep.  Raises
    :class:`RemapRequired` when any path's ``sup |grad ell|`` crosses
    ``cfg.remap_threshold``, and :class:`StochflowError` when more than
    1% of paths fail the invertibility certificate.
    """
    grid = history.grid
    u0_values = history.slices[0]
    times = history.times
    n_slices = times.size
    shape = grid.shape + (grid.dim,)

    starts = list(range(0, cfg.samples, PATH_BATCH))
    batches = [
        np.arange(s, min(s + PATH_BATCH, cfg.samples)) for s in starts
    ]

    def run_batch(indices):
        increments = _increments_block(
            cfg.seed, indices, cfg.dt, n_slices - 1, grid.dim
        )
        return _batch_contribution(grid, history, u0_values, increments, cfg)

    workers = worker_count(len(batches))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_batch, batches))
    else:
        results = [run_batch(b) for b in batches]

    trips = [r["trip"] for r in results if r["trip"] is not None]
    if trips:
        k_trip = min(trips)
        sup = max(r["sup_ell"][k_trip] for r in results
                  if r["trip"] is not None and r["trip"] <= k_trip)
        if k_trip <= 1:
            raise StochflowError(
                f"displacement gradient crossed {cfg.remap_threshold} on the "
                f"very first step (sup = {sup:.4g}); reduce dt"
            )
        raise RemapRequired(float(times[k_trip - 1]), sup, cfg.remap_threshold)

    acc = np.zeros((n_slices,) + shape)
    comp = np.zeros_like(acc)
    acc_sq = np.zeros_like(acc)
    comp_sq = np.zeros_like(acc)
    counts = np.zeros(n_slices, dtype=np.int64)
    sup_lam = np.zeros(n_slices)
    sup_ell = np.zeros(n_slices)
    for r in results:  # fixed batch order: bit-stable reduction
        _kahan_add(acc, comp, r["w_sum"])
        _kahan_add(acc_sq, comp_sq, r["w_sumsq"])
        counts += r["counts"]
        np.maximum(sup_lam, r["sup_lam"], out=sup_lam)
        np.maximum(sup_ell, r["sup_ell"], out=sup_ell)

    failed = cfg.samples - counts.min()
    if failed > max(0.01 * cfg.samples, 0):
        raise StochflowError(
            f"{failed} of {cfg.samples} paths failed the invertibility "
            f"certificate; aborting the sweep"
        )

    new_slices = np.empty_like(acc)
    new_slices[0] = u0_values
    mc_se = np.zeros(n_slices)
    for k in range(1, n_slices):
        m = counts[k]
        mean = acc[k] / m
        var = np.maximum(acc_sq[k] / m - mean**2, 0.0)
        mc_se[k] = float(np.sqrt(var.sum(axis=-1).mean() / m))
        # The k = 0 mode is carried by the reconstruction itself: the Leray
        # projection passes it through, the pull-back of a constant field is
        # exact, and the gradient factor in the Weber correction has no mean,
        # so constants survive to round-off while generic data keeps its mean
        # to solver accuracy.  Re-centering here would freeze the mean-mode
        # coupling that drives the Picard contraction for shear-like data.
        new_slices[k] = leray_values(grid, mean)

    new_history = VelocityHistory(
        grid=grid, times=times.copy(), slices=new_slices,
        interp_kind=cfg.interp_kind,
    )
    info = {
        "sup_grad_lam": sup_lam,
        "sup_grad_ell": sup_ell,
        "mc_se_l2": mc_se,
        "failed_paths": int(failed),
    }
    return new_history, info


def _gronwall_margin(grid, history, sup_lam):
    """Worst ratio of measured ``sup |grad lambda(t)|`` to the Gronwall
    envelope ``exp(U t / L) - 1`` driven by the drift's own gradient."""
    rate = history.sup_grad()
    margin = 0.0
    for k in range(1, history.times.size):
        bound = np.expm1(rate * float(history.times[k]))
        if bound > 1e-14:
            margin = max(margin, sup_lam[k] / bound)
        elif sup_lam[k] > 1e-12:
            return np.inf
    return margin


def _c0_sup(values):
    return float(np.sqrt((values**2).sum(axis=-1)).max())


def solve(u0, cfg):
    """Fixed-point iteration from the constant-in-time initial guess.

    Returns ``(history, report)``; the report carries per-iteration C0
    and C1 residuals plus trust-region / Monte-Carlo diagnostics of the
    final sweep.  Raises :class:`NoConvergence` (report attached) or
    :class:`RemapRequired` for a window restart.
    """
    grid = u0.grid
    div_sup = float(np.abs(div_values(grid, u0.values)).max())
    scale0 = _c0_sup(u0.values)
    if div_sup > 1e-9 * max(scale0 / grid.length, 1e-30) and div_sup > 1e-12:
        raise ValueError(
            f"initial velocity is not divergence-free (sup div = {div_sup:.3g})"
        )

    times = cfg.times()
    slices = np.broadcast_to(
        u0.values, (times.size,) + u0.values.shape
    ).copy()
    history = VelocityHistory(
        grid=grid, times=times, slices=slices, interp_kind=cfg.interp_kind
    )

    report = ConvergenceReport(
        what="stochastic-picard", tol=cfg.picard_tol,
    )
    scale = max(scale0, 1e-300)
    grad_scale = max(
        float(operator_norm(gradT_batched(grid, u0.values[None])).max())
        * grid.length,
        0.0,
    )
    info = {}
    for iteration in range(1, cfg.picard_max + 1):
        t0 = time.perf_counter()
        new_history, info = picard_step(history, cfg)
        delta = new_history.slices - history.slices
        res_c0 = max(_c0_sup(delta[k]) for k in range(times.size)) / scale
        res_c1 = max(
            _c0_sup(delta[k])
            + grid.length
            * float(operator_norm(gradT_batched(grid, delta[k][None])).max())
            for k in range(times.size)
        ) / (scale + grad_scale)
        wall = time.perf_counter() - t0
        report.add(iteration, res_c0, res_c1, wall)
        history = new_history
        if res_c0 < cfg.picard_tol:
            report.converged = True
            break
    if not report.converged:
        exc = NoConvergence(
            "stochastic solve", cfg.picard_max, report.residuals[-1],
            cfg.picard_tol,
        )
        exc.report = report
        raise exc

    report.diagnostics.update({
        "nu": cfg.nu,
        "samples": cfg.samples,
        "sup_speed": history.sup_speed(),
        "sup_grad_u": history.sup_grad(),
        "sup_grad_lam_max": float(np.max(info["sup_grad_lam"])),
        "sup_grad_ell_max": float(np.max(info["sup_grad_ell"])),
        "gronwall_margin": _gronwall_margin(
            grid, history, info["sup_grad_lam"]
        ),
        "mc_se_l2": info["mc_se_l2"],
        "mc_se_l2_final": float(info["mc_se_l2"][-1]),
        "failed_paths": info["failed_paths"],
    })
    return history, report


def solve_euler(u0, cfg):
    """Inviscid branch: the same pipeline with one noiseless path."""
    return solve(u0, replace(cfg, nu=0.0, samples=1))


@dataclass
class WindowedResult:
    history: VelocityHistory
    reports: list
    boundaries: list  # window start times, then t_final


# Seed offset between restart windows so a window's paths are not the
# same numbers that shaped its own initial data.
_WINDOW_SEED_STRIDE = 1000003


def solve_windowed(u0, cfg, max_windows=16):
    """Drive :func:`solve` across remap restarts.

    On :class:`RemapRequired` the window is re-solved up to the reported
    safe time, the converged endpoint becomes fresh initial data with
    the displacement reset, and the remainder continues from there.
    """
    grid = u0.grid
    reports = []
    boundaries = [0.0]
    seg_times = None
    seg_slices = None
    t_done = 0.0
    u_cur = u0
    window = 0
    while cfg.t_final - t_done > 0.5 * cfg.dt:
        if window >= max_windows:
            raise StochflowError(
                f"exceeded {max_windows} remap windows; flow gradients grow "
                f"too fast for this dt / threshold"
            )
        attempt = cfg.t_final - t_done
        wseed = cfg.seed + _WINDOW_SEED_STRIDE * window
        while True:
            wcfg = replace(cfg, t_final=attempt, seed=wseed)
            try:
                hist, rep = solve(u_cur, wcfg)
                break
            except RemapRequired as remap:
                # an earlier iterate may trip sooner than the converged
                # drift does; shrink until the window solves cleanly
                attempt = remap.t_star
        reports.append(rep)
        if seg_times is None:
            seg_times = hist.times
            seg_slices = hist.slices
        else:
            seg_times = np.concatenate([seg_times, hist.times[1:] + t_done])
            seg_slices = np.concatenate([seg_slices, hist.slices[1:]], axis=0)
        t_done += attempt
        boundaries.append(t_done)
        u_cur = Field(grid, hist.slices[-1])
        window += 1
    history = VelocityHistory(
        grid=grid, times=seg_times, slices=seg_slices,
        interp_kind=cfg.interp_kind,
    )
    return WindowedResult(history=history, reports=reports,
                          boundaries=boundaries)
