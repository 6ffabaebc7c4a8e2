"""Reference velocity fields and a conventional pseudo-spectral solver.

The solver is the measuring stick for the Lagrangian pipelines: 2-d
flows advance the scalar vorticity, 3-d flows the rotational-form
momentum equation, both with an integrating factor for the viscous
term and classical RK4 for the rest (dealiased with the 2/3 rule).
Mean (zero-mode) velocity is carried separately and held constant, as
the unforced periodic equations require.
"""

from __future__ import annotations

import numpy as np

from .errors import CFLViolation
from .grid import dealias_values, leray_values, vector_field
from .histories import VelocityHistory

__all__ = [
    "taylor_green",
    "taylor_green_exact",
    "shear_mode",
    "shear_exact",
    "reference_nse_solve",
]


def taylor_green(grid, amplitude=1.0):
    """Taylor-Green cellular flow, the classical vortex array."""
    two_pi = 2.0 * np.pi / grid.length
    c = grid.coords
    if grid.dim == 2:
        x, y = c[..., 0], c[..., 1]
        u = amplitude * np.sin(two_pi * x) * np.cos(two_pi * y)
        v = -amplitude * np.cos(two_pi * x) * np.sin(two_pi * y)
        return vector_field(grid, np.stack([u, v], axis=-1))
    x, y, z = c[..., 0], c[..., 1], c[..., 2]
    u = amplitude * np.sin(two_pi * x) * np.cos(two_pi * y) * np.cos(two_pi * z)
    v = -amplitude * np.cos(two_pi * x) * np.sin(two_pi * y) * np.cos(two_pi * z)
    w = np.zeros_like(u)
    return vector_field(grid, np.stack([u, v, w], axis=-1))


def taylor_green_exact(grid, amplitude, nu, t):
    """Exact 2-d solution: the initial pattern decaying as
    ``exp(-2 nu (2 pi / L)^2 t)``."""
    if grid.dim != 2:
        raise ValueError("closed-form decay only holds in two dimensions")
    decay = np.exp(-2.0 * nu * (2.0 * np.pi / grid.length) ** 2 * t)
    return vector_field(grid, taylor_green(grid, amplitude).values * decay)


def shear_mode(grid, amplitude=1.0, mode=1):
    """Parallel shear ``u = (A sin(2 pi m y / L), 0, ...)``; a steady
    Euler solution whose viscous evolution is a pure mode decay."""
    wavenum = 2.0 * np.pi * mode / grid.length
    y = grid.coords[..., 1]
    values = np.zeros(grid.shape + (grid.dim,))
    values[..., 0] = amplitude * np.sin(wavenum * y)
    return vector_field(grid, values)


def shear_exact(grid, amplitude, nu, t, mode=1):
    wavenum = 2.0 * np.pi * mode / grid.length
    decay = np.exp(-nu * wavenum**2 * t)
    return vector_field(grid, shear_mode(grid, amplitude, mode).values * decay)


def _check_cfl(grid, fluct, mean, dt, cap):
    speed = float(np.sqrt(((fluct + mean) ** 2).sum(axis=-1)).max())
    cfl = speed * dt / grid.h
    if cfl > cap:
        raise CFLViolation(cfl, cap)


def _velocity_from_vorticity(grid, w_spec, axes):
    """Biot-Savart on the torus: ``u_hat = (i k_y, -i k_x) w_hat / |k|^2``."""
    ux = np.fft.irfftn(grid.deriv[1] * w_spec * grid.inv_k2, s=grid.shape, axes=axes)
    uy = np.fft.irfftn(-grid.deriv[0] * w_spec * grid.inv_k2, s=grid.shape, axes=axes)
    return np.stack([ux, uy], axis=-1)


def _nonlinear_2d(grid, w_spec, mean, axes):
    """Dealiased ``-(u . grad) w`` in spectral space; also returns the
    fluctuation velocity at the evaluation state."""
    mask = grid.dealias_mask
    w_spec = w_spec * mask
    u = _velocity_from_vorticity(grid, w_spec, axes)
    gx = np.fft.irfftn(grid.deriv[0] * w_spec, s=grid.shape, axes=axes)
    gy = np.fft.irfftn(grid.deriv[1] * w_spec, s=grid.shape, axes=axes)
    adv = (u[..., 0] + mean[0]) * gx + (u[..., 1] + mean[1]) * gy
    return -np.fft.rfftn(adv, axes=axes) * mask, u


def _nonlinear_3d(grid, u_spec, mean, axes):
    """Dealiased rotational-form tendency ``P[u x omega]``."""
    mask = grid.dealias_mask[..., None]
    u_spec = u_spec * mask
    u = np.fft.irfftn(u_spec, s=grid.shape, axes=axes)
    d = grid.deriv
    wx = np.fft.irfftn(d[1] * u_spec[..., 2] - d[2] * u_spec[..., 1], s=grid.shape, axes=axes)
    wy = np.fft.irfftn(d[2] * u_spec[..., 0] - d[0] * u_spec[..., 2], s=grid.shape, axes=axes)
    wz = np.fft.irfftn(d[0] * u_spec[..., 1] - d[1] * u_spec[..., 0], s=grid.shape, axes=axes)
    ax_, ay, az = u[..., 0] + mean[0], u[..., 1] + mean[1], u[..., 2] + mean[2]
    cross = np.stack(
        [ay * wz - az * wy, az * wx - ax_ * wz, ax_ * wy - ay * wx],
        axis=-1,
    )
    spec = np.fft.rfftn(cross, axes=axes) * mask
    kdotw = sum(grid.k[a] * spec[..., a] for a in range(3)) * grid.inv_k2
    for a in range(3):
        spec[..., a] -= grid.k[a] * kdotw
    spec[(0,) * grid.dim] = 0.0  # mean momentum is conserved; pin it exactly
    return spec, u


def reference_nse_solve(u0, nu, t_final, n_steps, cfl_cap=0.8):
    """March the incompressible equations and collect every slice.

    Integrating-factor RK4: the viscous semigroup is applied exactly
    between stage evaluations, so only advection limits the step.  An
    advective CFL estimate ``sup|u| dt / h`` above ``cfl_cap`` aborts.
    """
    grid = u0.grid
    if u0.rank != 1:
        raise ValueError("initial condition must be a vector field")
    if nu < 0 or t_final <= 0 or n_steps < 1:
        raise ValueError("need nu >= 0, t_final > 0, n_steps >= 1")
    dt = t_final / n_steps
    times = np.linspace(0.0, t_final, n_steps + 1)
    axes = tuple(range(grid.dim))

    mean = u0.values.reshape(-1, grid.dim).mean(axis=0)
    fluct = leray_values(grid, dealias_values(grid, u0.values - mean))

    slices = np.zeros((n_steps + 1,) + grid.shape + (grid.dim,))
    slices[0] = fluct + mean

    if grid.dim == 2:
        spec2 = np.fft.rfftn(fluct, axes=axes)
        w_spec = grid.deriv[0] * spec2[..., 1] - grid.deriv[1] * spec2[..., 0]
        e_half = np.exp(-nu * grid.k2 * dt / 2.0)
        e_full = e_half * e_half
        for step in range(n_steps):
            a, u_now = _nonlinear_2d(grid, w_spec, mean, axes)
            _check_cfl(grid, u_now, mean, dt, cfl_cap)
            b, _ = _nonlinear_2d(grid, e_half * (w_spec + 0.5 * dt * a), mean, axes)
            c, _ = _nonlinear_2d(grid, e_half * w_spec + 0.5 * dt * b, mean, axes)
            d, _ = _nonlinear_2d(grid, e_full * w_spec + dt * e_half * c, mean, axes)
            w_spec = e_full * w_spec + (dt / 6.0) * (
                e_full * a + 2.0 * e_half * b + 2.0 * e_half * c + d
            )
            slices[step + 1] = _velocity_from_vorticity(grid, w_spec, axes) + mean
    else:
        u_spec = np.fft.rfftn(fluct, axes=axes)
        e_half = np.exp(-nu * grid.k2 * dt / 2.0)[..., None]
        e_full = e_half * e_half
        for step in range(n_steps):
            a, u_now = _nonlinear_3d(grid, u_spec, mean, axes)
            _check_cfl(grid, u_now, mean, dt, cfl_cap)
            b, _ = _nonlinear_3d(grid, e_half * (u_spec + 0.5 * dt * a), mean, axes)
            c, _ = _nonlinear_3d(grid, e_half * u_spec + 0.5 * dt * b, mean, axes)
            d, _ = _nonlinear_3d(grid, e_full * u_spec + dt * e_half * c, mean, axes)
            u_spec = e_full * u_spec + (dt / 6.0) * (
                e_full * a + 2.0 * e_half * b + 2.0 * e_half * c + d
            )
            slices[step + 1] = np.fft.irfftn(u_spec, s=grid.shape, axes=axes) + mean

    return VelocityHistory(grid=grid, times=times, slices=slices)
