"""Noisy characteristics: forward flow maps, their gradients, inversion.

A flow map solves ``dX = u(X, t) dt + sqrt(2 nu) dB`` from ``X = x`` at
the window start.  The Brownian increment is spatially uniform: every
node of one path shares the same ``dB_k``, so the noise enters the
positions exactly and only the drift needs a quadrature (Heun, strong
order one for additive noise).

The Eulerian displacement is ``lambda = X - id`` on the label nodes and
the back-to-labels displacement ``ell = A - id`` with ``A = X^{-1}``
solves ``ell(x) = -lambda(x + ell(x))``, a contraction whenever
``sup |grad lambda| < 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .errors import NoConvergence, NotInvertible, StochflowError
from .grid import Field, TorusGrid, grad_values, operator_norm
from .interp import _batch_into, interp_batched, interp_values
from .snapshot import write_snapshot

__all__ = [
    "BrownianDriver",
    "DisplacementMap",
    "FlowTrajectory",
    "integrate_flow",
    "integrate_gradient",
    "invert_map",
    "max_grad_opnorm",
    "INVERT_CERT_CAP",
    "INVERT_TOL",
    "INVERT_MAX_ITER",
]

# Inversion stops when the sup-norm update falls below INVERT_TOL * L;
# the defining-equation residual of the returned iterate is then below
# INVERT_CERT_CAP * INVERT_TOL * L, and the composition residual two
# orders under the 1e-8 L contract.
INVERT_CERT_CAP = 0.9
INVERT_TOL = 1e-10
INVERT_MAX_ITER = 50


def max_grad_opnorm(grid, values):
    """sup over nodes of the spectral-gradient operator norm."""
    return float(operator_norm(grad_values(grid, values)).max())


@dataclass(frozen=True)
class BrownianDriver:
    """Reproducible spatially-uniform Brownian increments for one path.

    The stream is keyed by ``(seed, path_index)`` alone, so a path keeps
    its increments when the ensemble around it grows or shrinks and
    across repeated runs.
    """

    seed: int
    path_index: int
    dt: float
    n_steps: int
    dim: int

    def __post_init__(self):
        if self.dt <= 0 or self.n_steps < 0:
            raise ValueError("driver needs dt > 0 and n_steps >= 0")
        object.__setattr__(self, "increments", _increments_block(
            self.seed, [self.path_index], self.dt, self.n_steps, self.dim
        )[0])


def _increments_block(seed, path_indices, dt, n_steps, dim):
    """Gaussian increment stack ``(len(paths), n_steps, dim)``, each row
    ``N(0, dt I)`` drawn from that path's own keyed stream."""
    out = np.empty((len(path_indices), n_steps, dim))
    root = np.sqrt(dt)
    for row, index in enumerate(path_indices):
        seq = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(index),))
        rng = np.random.Generator(np.random.PCG64(seq))
        out[row] = rng.standard_normal((n_steps, dim)) * root
    return out


@dataclass
class DisplacementMap:
    """Eulerian displacement ``lambda = X - id`` sampled on the labels."""

    field: Field
    time: float = 0.0
    path_index: int = None
    _sup_grad: float = dataclass_field(default=None, repr=False)

    def __post_init__(self):
        if self.field.rank != 1:
            raise ValueError("displacement must be a vector field")

    @property
    def grid(self):
        return self.field.grid

    def sup_grad(self):
        """Invertibility certificate: sup node operator norm of the
        displacement gradient."""
        if self._sup_grad is None:
            self._sup_grad = max_grad_opnorm(self.grid, self.field.values)
        return self._sup_grad

    def certify(self, cap=INVERT_CERT_CAP):
        sup = self.sup_grad()
        if not sup < cap:
            raise NotInvertible(sup, cap)
        return sup


@dataclass
class FlowTrajectory:
    """Displacement slices of one noisy flow, label-node layout."""

    grid: TorusGrid
    times: np.ndarray
    lams: np.ndarray  # (num_slices,) + grid.shape + (dim,)
    seed: int = 0
    path_index: int = 0
    nu: float = 0.0
    gradients: np.ndarray = None  # optional (num_slices,) + shape + (d, d)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.lams = np.asarray(self.lams, dtype=np.float64)

    @property
    def num_steps(self):
        return self.times.size - 1

    def displacement(self, k):
        return self.lams[k]

    def displacement_map(self, k):
        return DisplacementMap(
            Field(self.grid, self.lams[k]),
            time=float(self.times[k]),
            path_index=self.path_index,
        )

    def write_slice(self, path, k):
        """Snapshot one slice, tagging the path in the header extension."""
        write_snapshot(
            path,
            Field(self.grid, self.lams[k]),
            float(self.times[k]),
            path_index=self.path_index,
        )


def _window_indices(times, t0, t1):
    t0 = float(times[0]) if t0 is None else float(t0)
    t1 = float(times[-1]) if t1 is None else float(t1)
    k0 = int(np.argmin(np.abs(times - t0)))
    k1 = int(np.argmin(np.abs(times - t1)))
    scale = max(1.0, abs(float(times[-1])))
    if abs(times[k0] - t0) > 1e-9 * scale or abs(times[k1] - t1) > 1e-9 * scale:
        raise ValueError("t0/t1 must coincide with stored history times")
    if k1 <= k0:
        raise ValueError("need t1 > t0")
    return k0, k1


def integrate_flow(u, driver, nu=0.0, t0=None, t1=None, store_gradient=False):
    """Integrate the noisy flow of a velocity history over a window.

    Drift is advanced with Heun's rule (evaluate at the current
    position and time, predict with the noise included, correct with
    the end-of-step field); the Brownian term is added exactly.  With
    ``store_gradient=True`` the companion linear system ``d(grad X) =
    (grad u o X) grad X dt`` is advanced with the same rule, using the
    gradient-transpose layout ``J[a, i] = d_a X_i``.
    """
    grid = u.grid if hasattr(u, "grid") else None
    if grid is None:
        raise ValueError("drift must carry a grid")
    times = np.asarray(u.times, dtype=np.float64)
    k0, k1 = _window_indices(times, t0, t1)
    steps = k1 - k0
    dt = float(times[k0 + 1] - times[k0])
    if abs(driver.dt - dt) > 1e-12 * max(1.0, dt):
        raise ValueError("driver dt does not match the history spacing")
    if driver.n_steps < steps:
        raise ValueError("driver holds too few increments for the window")
    if nu < 0:
        raise ValueError("nu must be nonnegative")

    coords = grid.coords.reshape(-1, grid.dim)
    num = coords.shape[0]
    positions = coords.copy()
    lams = np.zeros((steps + 1,) + grid.shape + (grid.dim,))
    amp = np.sqrt(2.0 * nu)

    grads = None
    if store_gradient:
        grads = np.zeros((steps + 1,) + grid.shape + (grid.dim, grid.dim))
        jac = np.zeros((num, grid.dim, grid.dim))
        for a in range(grid.dim):
            jac[:, a, a] = 1.0
        grads[0] = jac.reshape(grid.shape + (grid.dim, grid.dim))

    for step in range(steps):
        k = k0 + step
        noise = amp * driver.increments[step] if nu > 0 else None
        f1 = u.evaluate_slice(k, positions)
        if not np.all(np.isfinite(f1)):
            raise StochflowError(
                f"non-finite drift at t = {times[k]:.6g} (step {step}); "
                f"aborting flow integration"
            )
        predicted = positions + dt * f1
        if noise is not None:
            predicted = predicted + noise
        f2 = u.evaluate_slice(k + 1, predicted)
        if not np.all(np.isfinite(f2)):
            raise StochflowError(
                f"non-finite drift at t = {times[k + 1]:.6g} (predictor); "
                f"aborting flow integration"
            )
        if store_gradient:
            g1 = np.einsum("paj,pji->pai", jac, u.gradient_slice(k, positions))
            g2 = np.einsum(
                "paj,pji->pai",
                jac + dt * g1,
                u.gradient_slice(k + 1, predicted),
            )
            jac = jac + 0.5 * dt * (g1 + g2)
            grads[step + 1] = jac.reshape(grid.shape + (grid.dim, grid.dim))
        positions = positions + 0.5 * dt * (f1 + f2)
        if noise is not None:
            positions = positions + noise
        lams[step + 1] = (positions - coords).reshape(grid.shape + (grid.dim,))

    return FlowTrajectory(
        grid=grid,
        times=times[k0 : k1 + 1].copy(),
        lams=lams,
        seed=driver.seed,
        path_index=driver.path_index,
        nu=float(nu),
        gradients=grads,
    )


def integrate_gradient(u, driver, nu=0.0, t0=None, t1=None):
    """Companion flow-gradient stack ``(num_slices,) + shape + (d, d)``."""
    traj = integrate_flow(
        u, driver, nu=nu, t0=t0, t1=t1, store_gradient=True
    )
    return traj.gradients


def integrate_flow_block(grid, u, increments, nu, k0=0, k1=None):
    """Batched flow integration: one trajectory per increment row.

    ``increments`` has shape ``(B, steps, dim)``; returns displacement
    slices ``(steps + 1, B) + grid.shape + (dim,)`` relative to window
    start.  Slice-major layout so per-slice reconstruction can stream.
    """
    times = np.asarray(u.times, dtype=np.float64)
    if k1 is None:
        k1 = times.size - 1
    steps = k1 - k0
    dt = float(times[1] - times[0])
    nbatch = increments.shape[0]
    if increments.shape[1] < steps:
        raise ValueError("increment block too short for the window")

    coords = grid.coords.reshape(-1, grid.dim)
    num = coords.shape[0]
    positions = np.broadcast_to(coords, (nbatch, num, grid.dim)).copy()
    lams = np.zeros((steps + 1, nbatch) + grid.shape + (grid.dim,))
    amp = np.sqrt(2.0 * nu)

    for step in range(steps):
        k = k0 + step
        flat = positions.reshape(-1, grid.dim)
        f1 = u.evaluate_slice(k, flat).reshape(positions.shape)
        if not np.all(np.isfinite(f1)):
            raise StochflowError(
                f"non-finite drift at t = {times[k]:.6g} (step {step}); "
                f"aborting flow integration"
            )
        predicted = positions + dt * f1
        if nu > 0:
            predicted += amp * increments[:, step, None, :]
        f2 = u.evaluate_slice(k + 1, predicted.reshape(-1, grid.dim)).reshape(
            positions.shape
        )
        positions = positions + 0.5 * dt * (f1 + f2)
        if nu > 0:
            positions += amp * increments[:, step, None, :]
        lams[step + 1] = (positions - coords).reshape(
            (nbatch,) + grid.shape + (grid.dim,)
        )

    return lams


def invert_map(
    disp,
    tol=INVERT_TOL,
    max_iter=INVERT_MAX_ITER,
    cert_cap=INVERT_CERT_CAP,
    interp_kind="lagrange",
):
    """Back-to-labels displacement by the contraction iteration.

    Iterates ``ell <- -lambda(x + ell)`` from ``ell = -lambda`` until
    the sup update is below ``tol * L``; with the certificate
    ``sup |grad lambda| <= cert_cap < 1`` enforced beforehand, the
    fixed-point residual ``ell(x) + lambda(x + ell(x))`` is then below
    ``tol * L`` as well.
    """
    if isinstance(disp, Field):
        disp = DisplacementMap(disp)
    disp.certify(cert_cap)
    grid = disp.grid
    ells, iters = _invert_block(
        grid,
        disp.field.values[None],
        tol=tol,
        max_iter=max_iter,
        interp_kind=interp_kind,
    )
    return Field(grid, ells[0])


def _invert_block(grid, lams, tol, max_iter, interp_kind="lagrange", ell0=None):
    """Batched fixed-point inversion; lams ``(B,) + shape + (d,)``.

    Returns ``(ells, iterations)``.  Certification is the caller's job.
    """
    nbatch = lams.shape[0]
    num = grid.num_nodes
    coords = grid.coords.reshape(-1, grid.dim)
    bound = tol * grid.length

    if interp_kind != "lagrange":
        lam_flat = lams.reshape(nbatch, num, grid.dim)
        ell = -lam_flat.copy() if ell0 is None else ell0.reshape(
            nbatch, num, grid.dim
        ).copy()
        for iteration in range(1, max_iter + 1):
            pts = coords + ell
            nxt = -interp_batched(grid, lams, pts,
                                  kind=interp_kind).reshape(ell.shape)
            delta = float(np.abs(nxt - ell).max())
            ell = nxt
            if delta <= bound:
                return ell.reshape(lams.shape), iteration
        raise NoConvergence("map inversion", max_iter, delta, bound)

    # hot path: preallocated buffers, no per-iteration copies
    lam_c = np.ascontiguousarray(lams, dtype=np.float64)
    ell = (
        -lam_c.reshape(nbatch, num, grid.dim)
        if ell0 is None
        else np.ascontiguousarray(ell0, dtype=np.float64).reshape(
            nbatch, num, grid.dim
        ).copy()
    )
    pts = np.empty_like(ell)
    nxt = np.empty_like(ell)
    for iteration in range(1, max_iter + 1):
        np.add(coords, ell, out=pts)
        _batch_into(grid, lam_c, pts, nxt)
        np.negative(nxt, out=nxt)
        delta = float(np.abs(nxt - ell).max())
        ell, nxt = nxt, ell
        if delta <= bound:
            return ell.reshape(lams.shape), iteration
    raise NoConvergence("map inversion", max_iter, delta, bound)
