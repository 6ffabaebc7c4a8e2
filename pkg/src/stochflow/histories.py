"""Time-indexed velocity histories and solver convergence reports."""

from __future__ import annotations

from dataclasses import dataclass, field as dataclass_field

import numpy as np

from .grid import TorusGrid, div_values, grad_values
from .interp import interp_values

__all__ = ["VelocityHistory", "AnalyticDrift", "ConvergenceReport"]


@dataclass
class VelocityHistory:
    """Velocity slices at uniformly spaced times ``0, dt, ..., t_final``.

    ``slices`` has shape ``(num_slices,) + grid.shape + (dim,)``.  The
    first slice is the initial condition by construction in every solver.
    """

    grid: TorusGrid
    times: np.ndarray
    slices: np.ndarray
    interp_kind: str = "lagrange"

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.slices = np.asarray(self.slices, dtype=np.float64)
        expected = (self.times.size,) + self.grid.shape + (self.grid.dim,)
        if self.slices.shape != expected:
            raise ValueError(
                f"slices shape {self.slices.shape}, expected {expected}"
            )
        if self.times.size < 1 or np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if not np.all(np.isfinite(self.slices)):
            raise ValueError("velocity slices must be finite")
        self._grad_cache = {}

    @property
    def num_steps(self):
        return self.times.size - 1

    @property
    def dt(self):
        if self.times.size < 2:
            return 0.0
        return float(self.times[1] - self.times[0])

    @property
    def t_final(self):
        return float(self.times[-1])

    @property
    def initial(self):
        return self.slices[0]

    @property
    def final(self):
        return self.slices[-1]

    def slice_at(self, t):
        """Slice whose time matches ``t`` to round-off; no interpolation."""
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"no stored slice at t = {t}")
        return self.slices[k]

    def evaluate_slice(self, k, points):
        """Velocity of slice ``k`` at off-grid points."""
        return interp_values(
            self.grid, self.slices[k], points, kind=self.interp_kind
        )

    def gradient_slice(self, k, points):
        """Velocity gradient (``G[i, j] = d_i u_j``) of slice ``k`` at
        off-grid points; nodal gradients are cached two slices deep."""
        k = int(k)
        if k not in self._grad_cache:
            if len(self._grad_cache) > 1:
                oldest = min(self._grad_cache)
                if oldest < k:
                    del self._grad_cache[oldest]
                else:
                    self._grad_cache.clear()
            self._grad_cache[k] = grad_values(self.grid, self.slices[k])
        return interp_values(
            self.grid, self._grad_cache[k], points, kind=self.interp_kind
        )

    def max_divergence(self):
        """sup over slices and nodes of the spectral divergence."""
        worst = 0.0
        for k in range(self.times.size):
            worst = max(
                worst, float(np.abs(div_values(self.grid, self.slices[k])).max())
            )
        return worst

    def sup_speed(self):
        """sup over slices and nodes of the velocity magnitude."""
        mags = np.sqrt(np.sum(self.slices**2, axis=-1))
        return float(mags.max())

    def sup_grad(self):
        """sup over slices and nodes of the velocity gradient operator
        norm (used as the Gronwall rate)."""
        from .grid import operator_norm

        worst = 0.0
        for k in range(self.times.size):
            g = grad_values(self.grid, self.slices[k])
            worst = max(worst, float(operator_norm(g).max()))
        return worst


@dataclass
class AnalyticDrift:
    """Closed-form drift with the same slice protocol as a history.

    ``velocity(points, t)`` and ``gradient(points, t)`` are callables
    returning ``(P, dim)`` and ``(P, dim, dim)`` arrays with the
    ``G[i, j] = d_i u_j`` layout.  Used by validation tests where
    interpolation error must be absent.
    """

    grid: TorusGrid
    times: np.ndarray
    velocity: object
    gradient: object = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)

    @property
    def num_steps(self):
        return self.times.size - 1

    def evaluate_slice(self, k, points):
        return self.velocity(points, float(self.times[k]))

    def gradient_slice(self, k, points):
        if self.gradient is None:
            raise ValueError("analytic drift has no gradient callable")
        return self.gradient(points, float(self.times[k]))


@dataclass
class ConvergenceReport:
    """Per-iteration residual ledger of a fixed-point solve."""

    what: str
    rows: list = dataclass_field(default_factory=list)
    converged: bool = False
    tol: float = 0.0
    diagnostics: dict = dataclass_field(default_factory=dict)

    def add(self, iteration, residual_c0, residual_c1, wall_time_s):
        self.rows.append(
            {
                "iter": int(iteration),
                "residual_c0": float(residual_c0),
                "residual_c1": float(residual_c1),
                "wall_time_s": float(wall_time_s),
            }
        )

    @property
    def residuals(self):
        return [row["residual_c0"] for row in self.rows]

    @property
    def iterations(self):
        return len(self.rows)

    def to_csv(self, path):
        """Write the normative four-column report.

        ``wall_time_s`` is measured from the host clock and is the one
        column that varies between otherwise identical runs.
        """
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("iter,residual_c0,residual_c1,wall_time_s\n")
            for row in self.rows:
                fh.write(
                    f"{row['iter']},{row['residual_c0']!r},"
                    f"{row['residual_c1']!r},{row['wall_time_s']:.6f}\n"
                )

    def summary(self):
        last = self.rows[-1] if self.rows else None
        res = f"{last['residual_c0']:.3e}" if last else "n/a"
        return (
            f"{self.what}: {'converged' if self.converged else 'not converged'} "
            f"after {self.iterations} iterations (residual {res}, tol {self.tol:g})"
        )
