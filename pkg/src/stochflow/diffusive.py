"""Deterministic diffusive-Lagrangian solver.

Noise-free counterpart of the Monte-Carlo pipeline: the back-to-labels
displacement obeys an advection-diffusion equation with source ``-u``,
a virtual velocity carries the initial data with a commutator source,
and the velocity is reconstructed through the Weber operator:

    d ell/dt + (u . grad) ell - nu Lap ell = -u,      ell(0) = 0,
    d v_b /dt + (u . grad) v_b - nu Lap v_b = 2 nu C^i_{j,b} d_j v_i,
    v(0) = u(0),      u = W(v, ell).

Commutator coefficients use the Jacobian convention
``N[k, i] = delta_ki + d_i ell_k`` and

    C^p_{j,i} = (N^{-1})[k, i] d_k d_j ell_p,

stored as ``C[..., i, j, p] = C^p_{j,i}``; to first order in a small
displacement, ``C^p_{j,i} = d_i d_j ell_p``.  Time stepping is an
integrating-factor Heun rule: diffusion applied exactly in Fourier
space, advection and sources explicit, products truncated to the 2/3
ball.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .errors import BallExit, NoConvergence, StochflowError
from .flowmap import DisplacementMap
from .grid import (
    Field,
    dealias_values,
    div_values,
    grad_values,
    leray_values,
    operator_norm,
)
from .histories import ConvergenceReport, VelocityHistory
from .stochastic import WindowedResult, _c0_sup
from .weber import gradT_batched, weber_batched

__all__ = [
    "DiffusiveConfig",
    "commutator",
    "commutator_values",
    "neumann_inverse",
    "advance_displacement",
    "advance_virtual_velocity",
    "solve_diffusive",
]


@dataclass(frozen=True)
class DiffusiveConfig:
    """Run parameters for the deterministic Lagrangian solver."""

    nu: float
    dt: float
    t_final: float
    picard_tol: float = 1e-8
    picard_max: int = 40
    remap_threshold: float = 0.4

    def __post_init__(self):
        if self.nu < 0:
            raise ValueError("nu must be nonnegative")
        if not (0 < self.dt <= self.t_final):
            raise ValueError("need 0 < dt <= t_final")
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


def neumann_inverse(x, terms=40):
    """Truncated series ``sum_n (-x)^n`` for ``(I + x)^{-1}``.

    Matrix-field utility kept as an oracle for the direct inverse;
    ``x`` is ``(..., d, d)`` with spectral norm below one.
    """
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[-1]
    eye = np.broadcast_to(np.eye(d), x.shape).copy()
    acc = eye.copy()
    power = eye
    for _ in range(terms):
        power = -np.einsum("...ij,...jk->...ik", power, x)
        acc += power
    return acc


def commutator_values(grid, ell_values):
    """Commutator coefficients of a displacement, direct per-node inverse.

    Returns ``C[..., i, j, p] = (N^{-1})[k, i] d_k d_j ell_p`` with the
    Jacobian ``N[k, i] = delta_ki + d_i ell_k`` inverted exactly at
    every node; second derivatives are spectral.
    """
    from .errors import SingularMatrix

    g = grad_values(grid, ell_values)  # g[..., a, c] = d_a ell_c
    sup = float(operator_norm(g).max())
    if not sup < 1.0:
        raise SingularMatrix(
            f"sup |grad ell| = {sup:.4g} >= 1; Jacobian I + grad ell may be "
            f"singular"
        )
    jac = np.swapaxes(g, -1, -2).copy()  # jac[k, i] = d_i ell_k
    for a in range(grid.dim):
        jac[..., a, a] += 1.0
    try:
        inv = np.linalg.inv(jac)
    except np.linalg.LinAlgError as err:
        raise SingularMatrix(str(err)) from None
    hess = grad_values(grid, g)  # hess[..., k, j, p] = d_k d_j ell_p
    return np.einsum("...ki,...kjp->...ijp", inv, hess)


def commutator(ell):
    """Field-level wrapper of :func:`commutator_values`."""
    values = ell.field.values if hasattr(ell, "field") else ell.values
    grid = ell.grid
    return Field(grid, commutator_values(grid, values))


def _if_heun(grid, f, nu, dt, tendency_now, tendency_next):
    """One integrating-factor Heun step of d_t f - nu Lap f = N(f, t).

    ``tendency_*`` are callables of the nodal state; diffusion is exact
    between stages.
    """
    axes = tuple(range(grid.dim))
    rank = grid.rank_of(f)
    decay = np.exp(-nu * grid.k2 * dt)
    if rank:
        decay = decay.reshape(decay.shape + (1,) * rank)
    f_spec = np.fft.rfftn(f, axes=axes)
    n1 = np.fft.rfftn(tendency_now(f), axes=axes)
    predictor = np.fft.irfftn(decay * (f_spec + dt * n1), s=grid.shape, axes=axes)
    n2 = np.fft.rfftn(tendency_next(predictor), axes=axes)
    return np.fft.irfftn(
        decay * (f_spec + 0.5 * dt * n1) + 0.5 * dt * n2,
        s=grid.shape, axes=axes,
    )


def _advection(grid, u_values, f_values):
    """Dealiased ``-(u . grad) f`` for a vector-valued transported field."""
    g = grad_values(grid, f_values)  # g[..., a, c]
    adv = np.einsum("...a,...ac->...c", u_values, g)
    return -dealias_values(grid, adv)


def advance_displacement(ell, u_now, u_next, nu, dt,
                         remap_threshold=0.4, t_now=0.0):
    """One step of the displacement equation; trust-region checked.

    Raises :class:`BallExit` carrying the pre-step time when the
    post-step ``sup |grad ell|`` reaches ``remap_threshold``.
    """
    grid = u_now.grid if hasattr(u_now, "grid") else ell.grid
    ell_values = ell.field.values if hasattr(ell, "field") else (
        ell.values if hasattr(ell, "values") else np.asarray(ell)
    )
    un = u_now.values if hasattr(u_now, "values") else np.asarray(u_now)
    up = u_next.values if hasattr(u_next, "values") else np.asarray(u_next)
    out = _if_heun(
        grid, ell_values, nu, dt,
        lambda f: _advection(grid, un, f) - un,
        lambda f: _advection(grid, up, f) - up,
    )
    sup = float(operator_norm(grad_values(grid, out)).max())
    if sup >= remap_threshold:
        raise BallExit(t_now, sup, remap_threshold)
    if hasattr(ell, "field"):
        return DisplacementMap(Field(grid, out), time=t_now + dt)
    if hasattr(ell, "values"):
        return Field(grid, out)
    return out


def advance_virtual_velocity(v, u_now, u_next, C_now, nu, dt, C_next=None):
    """One step of the virtual-velocity equation.

    The source ``2 nu C^i_{j,b} d_j v_i`` contracts the stored
    commutator layout against the gradient and is truncated to the 2/3
    ball; ``C_next`` (default: ``C_now``) feeds the corrector stage.
    """
    grid = u_now.grid if hasattr(u_now, "grid") else v.grid
    v_values = v.values if hasattr(v, "values") else np.asarray(v)
    un = u_now.values if hasattr(u_now, "values") else np.asarray(u_now)
    up = u_next.values if hasattr(u_next, "values") else np.asarray(u_next)
    cn = C_now.values if hasattr(C_now, "values") else np.asarray(C_now)
    cp = cn if C_next is None else (
        C_next.values if hasattr(C_next, "values") else np.asarray(C_next)
    )

    def tendency(c_tensor, u_values):
        def inner(f):
            g = grad_values(grid, f)  # g[..., j, i] = d_j v_i
            source = 2.0 * nu * np.einsum("...bji,...ji->...b", c_tensor, g)
            return _advection(grid, u_values, f) + dealias_values(grid, source)
        return inner

    out = _if_heun(grid, v_values, nu, dt, tendency(cn, un), tendency(cp, up))
    return Field(grid, out) if hasattr(v, "values") else out


def _diffusive_sweep(history, cfg):
    """Evolve (ell, v) under the current drift and reconstruct each slice."""
    grid = history.grid
    times = history.times
    u0_values = history.slices[0]
    mean0 = u0_values.reshape(-1, grid.dim).mean(axis=0)

    ell = np.zeros_like(u0_values)
    v = leray_values(grid, u0_values)
    c_now = commutator_values(grid, ell)
    new_slices = np.empty_like(history.slices)
    new_slices[0] = u0_values
    sup_ell_max = 0.0
    for n in range(times.size - 1):
        u_n = history.slices[n]
        u_p = history.slices[n + 1]
        ell = advance_displacement(
            ell, Field(grid, u_n), Field(grid, u_p), cfg.nu, cfg.dt,
            remap_threshold=cfg.remap_threshold, t_now=float(times[n]),
        )
        sup_ell = float(operator_norm(grad_values(grid, ell)).max())
        sup_ell_max = max(sup_ell_max, sup_ell)
        c_next = commutator_values(grid, ell)
        v = advance_virtual_velocity(
            v, Field(grid, u_n), Field(grid, u_p), c_now, cfg.nu, cfg.dt,
            C_next=c_next,
        )
        c_now = c_next
        w = weber_batched(grid, v[None], ell[None])[0]
        w += mean0 - w.reshape(-1, grid.dim).mean(axis=0)
        new_slices[n + 1] = w
    new_history = VelocityHistory(grid=grid, times=times.copy(),
                                  slices=new_slices)
    return new_history, sup_ell_max


def _solve_window(u0, cfg):
    grid = u0.grid
    div_sup = float(np.abs(div_values(grid, u0.values)).max())
    scale0 = _c0_sup(u0.values)
    if div_sup > 1e-9 * max(scale0 / grid.length, 1e-30) and div_sup > 1e-12:
        raise ValueError(
            f"initial velocity is not divergence-free (sup div = {div_sup:.3g})"
        )
    times = cfg.times()
    slices = np.broadcast_to(u0.values, (times.size,) + u0.values.shape).copy()
    history = VelocityHistory(grid=grid, times=times, slices=slices)

    report = ConvergenceReport(what="diffusive-picard", tol=cfg.picard_tol)
    scale = max(scale0, 1e-300)
    grad_scale = (
        float(operator_norm(gradT_batched(grid, u0.values[None])).max())
        * grid.length
    )
    sup_ell_max = 0.0
    for iteration in range(1, cfg.picard_max + 1):
        t0 = time.perf_counter()
        new_history, sup_ell_max = _diffusive_sweep(history, cfg)
        delta = new_history.slices - history.slices
        res_c0 = max(_c0_sup(delta[k]) for k in range(times.size)) / scale
        res_c1 = max(
            _c0_sup(delta[k])
            + grid.length
            * float(operator_norm(gradT_batched(grid, delta[k][None])).max())
            for k in range(times.size)
        ) / (scale + grad_scale)
        report.add(iteration, res_c0, res_c1, time.perf_counter() - t0)
        history = new_history
        if res_c0 < cfg.picard_tol:
            report.converged = True
            break
    if not report.converged:
        exc = NoConvergence(
            "diffusive solve", cfg.picard_max, report.residuals[-1],
            cfg.picard_tol,
        )
        exc.report = report
        raise exc
    report.diagnostics.update({
        "nu": cfg.nu,
        "sup_speed": history.sup_speed(),
        "sup_grad_u": history.sup_grad(),
        "sup_grad_ell_max": sup_ell_max,
    })
    return history, report


def solve_diffusive(u0, cfg, max_windows=16):
    """Outer fixed-point solve with automatic window restarts.

    Each window starts from ``ell = 0`` and ``v = u`` at the window
    head; a :class:`BallExit` during a sweep shrinks the window to the
    last in-ball time and the solve continues from the converged state
    there.
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
                f"exceeded {max_windows} remap windows; displacement "
                f"gradients grow too fast for this dt / threshold"
            )
        attempt = cfg.t_final - t_done
        while True:
            wcfg = replace(cfg, t_final=attempt)
            try:
                hist, rep = _solve_window(u_cur, wcfg)
                break
            except BallExit as exit_:
                attempt = round(exit_.t_star / cfg.dt) * cfg.dt
                if attempt <= 0.5 * cfg.dt:
                    raise StochflowError(
                        "displacement left the trust region on the first "
                        "step; reduce dt"
                    ) from None
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
    history = VelocityHistory(grid=grid, times=seg_times, slices=seg_slices)
    return WindowedResult(history=history, reports=reports,
                          boundaries=boundaries)
