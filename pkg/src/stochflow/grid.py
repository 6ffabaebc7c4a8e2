"""Periodic torus grid and the pseudo-spectral operator toolbox.

Fields live on the uniform collocation grid of ``[0, L)^dim`` with nodes
``x_j = j * L / n`` along every axis.  A rank-``r`` field is stored as a
real array of shape ``(n,) * dim + (dim,) * r``: spatial axes first (axis
``a`` of the array indexes coordinate ``a``), component axes last.

Derivative convention: ``spectral_gradient`` prepends the derivative index,
so for a vector field ``w`` the result ``G`` satisfies ``G[..., i, j] =
d_i w_j`` (the gradient-transpose matrix).  Matrix-vector contractions in
the rest of the package follow this layout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "TorusGrid",
    "Field",
    "SpectralField",
    "scalar_field",
    "vector_field",
    "tensor_field",
    "fft_forward",
    "fft_inverse",
    "spectral_gradient",
    "divergence",
    "leray_project",
    "dealias",
    "dealiased_product",
    "operator_norm",
    "random_scalar",
    "random_vector",
    "random_divergence_free",
    "random_displacement",
]


@dataclass(frozen=True)
class TorusGrid:
    """Uniform periodic grid on ``[0, L)^dim``.

    Parameters
    ----------
    dim : int
        Spatial dimension, 2 or 3.
    n : int
        Nodes per axis; must be even and at least 8.
    length : float
        Period ``L`` of the torus, identical along every axis.
    """

    dim: int
    n: int
    length: float = 2.0 * np.pi

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"Grid dim must be 2 or 3, got {self.dim}")
        if self.n < 8 or self.n % 2 != 0:
            raise ValueError(f"Grid n must be even and >= 8, got {self.n}")
        if not (self.length > 0.0):
            raise ValueError(f"Grid length must be positive, got {self.length}")

        n, d, L = self.n, self.dim, float(self.length)
        object.__setattr__(self, "length", L)
        object.__setattr__(self, "h", L / n)
        object.__setattr__(self, "shape", (n,) * d)

        # Integer mode indices per axis in FFT storage order; the last axis
        # uses the half-spectrum (rfft) layout.
        idx_full = np.fft.fftfreq(n, d=1.0 / n).astype(np.int64)
        idx_half = np.arange(n // 2 + 1, dtype=np.int64)
        modes = []
        for a in range(d):
            idx = idx_half if a == d - 1 else idx_full
            shp = [1] * d
            shp[a] = idx.size
            modes.append(idx.reshape(shp))
        object.__setattr__(self, "modes", tuple(modes))

        two_pi_over_L = 2.0 * np.pi / L
        kvec = tuple(m.astype(np.float64) * two_pi_over_L for m in modes)
        object.__setattr__(self, "k", kvec)

        k2 = sum(ka**2 for ka in kvec) + np.zeros(self.spectral_shape)
        object.__setattr__(self, "k2", k2)
        inv_k2 = np.zeros_like(k2)
        nz = k2 > 0.0
        inv_k2[nz] = 1.0 / k2[nz]
        object.__setattr__(self, "inv_k2", inv_k2)

        # ik multipliers for differentiation, with the Nyquist mode of the
        # differentiated axis zeroed (symmetric choice for even n).
        deriv = []
        for a in range(d):
            mult = 1j * kvec[a].astype(np.complex128)
            mult = mult * (np.abs(modes[a]) != n // 2)
            deriv.append(mult)
        object.__setattr__(self, "deriv", tuple(deriv))

        # 2/3-rule mask: keep modes with |index| <= n // 3 on every axis.
        keep = n // 3
        mask = np.ones(self.spectral_shape, dtype=bool)
        for a in range(d):
            mask &= np.abs(modes[a]) <= keep
        object.__setattr__(self, "dealias_mask", mask)

        axes = np.arange(n, dtype=np.float64) * self.h
        object.__setattr__(self, "axes", axes)
        mesh = np.meshgrid(*([axes] * d), indexing="ij")
        object.__setattr__(self, "coords", np.stack(mesh, axis=-1))

    @property
    def spectral_shape(self):
        """Shape of one scalar rfft spectrum on this grid."""
        return (self.n,) * (self.dim - 1) + (self.n // 2 + 1,)

    @property
    def num_nodes(self):
        return self.n**self.dim

    def rank_of(self, values):
        """Field rank implied by an array's shape, validating the layout."""
        values = np.asarray(values)
        extra = values.ndim - self.dim
        if extra < 0 or values.shape[: self.dim] != self.shape:
            raise ValueError(
                f"values shape {values.shape} does not start with grid shape "
                f"{self.shape}"
            )
        if values.shape[self.dim :] != (self.dim,) * extra:
            raise ValueError(
                f"trailing component axes {values.shape[self.dim:]} are not "
                f"({self.dim},) * rank"
            )
        return extra


@dataclass(frozen=True)
class Field:
    """A real field sampled on the nodes of a :class:`TorusGrid`."""

    grid: TorusGrid
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        rank = self.grid.rank_of(values)
        object.__setattr__(self, "rank", rank)
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")


def scalar_field(grid, values):
    f = Field(grid, values)
    if f.rank != 0:
        raise ValueError(f"expected rank 0, got rank {f.rank}")
    return f


def vector_field(grid, values):
    f = Field(grid, values)
    if f.rank != 1:
        raise ValueError(f"expected rank 1, got rank {f.rank}")
    return f


def tensor_field(grid, values):
    f = Field(grid, values)
    if f.rank != 2:
        raise ValueError(f"expected rank 2, got rank {f.rank}")
    return f


@dataclass(frozen=True)
class SpectralField:
    """Fourier coefficients of a real field, half-spectrum storage.

    Coefficients are normalized so that ``coeff((0,) * dim)`` is the field
    mean and a unit cosine along one axis carries two coefficients of value
    one half at opposite wavevectors.
    """

    grid: TorusGrid
    coeffs: np.ndarray  # shape spectral_shape + (dim,) * rank, complex

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=np.complex128)
        object.__setattr__(self, "coeffs", coeffs)
        extra = coeffs.ndim - self.grid.dim
        if extra < 0 or coeffs.shape[: self.grid.dim] != self.grid.spectral_shape:
            raise ValueError(
                f"coefficient shape {coeffs.shape} does not match spectral "
                f"shape {self.grid.spectral_shape}"
            )
        object.__setattr__(self, "rank", extra)

    def coeff(self, kvec):
        """Coefficient at an integer wavevector, resolving Hermitian pairs."""
        kvec = tuple(int(k) for k in kvec)
        if len(kvec) != self.grid.dim:
            raise ValueError(f"wavevector must have {self.grid.dim} entries")
        n = self.grid.n
        if any(abs(k) > n // 2 for k in kvec):
            raise ValueError(f"wavevector {kvec} outside resolved band")
        conjugate = kvec[-1] < 0
        if conjugate:
            kvec = tuple(-k for k in kvec)
        index = tuple(k % n for k in kvec[:-1]) + (kvec[-1],)
        value = self.coeffs[index]
        return np.conj(value) if conjugate else value


def fft_forward(field):
    """Forward real FFT of a field, normalized to mean convention."""
    grid = field.grid
    axes = tuple(range(grid.dim))
    coeffs = np.fft.rfftn(field.values, axes=axes) / grid.num_nodes
    return SpectralField(grid, coeffs)


def fft_inverse(spectral):
    """Inverse of :func:`fft_forward`; returns a nodal :class:`Field`."""
    grid = spectral.grid
    axes = tuple(range(grid.dim))
    values = np.fft.irfftn(
        spectral.coeffs * grid.num_nodes, s=grid.shape, axes=axes
    )
    return Field(grid, values)


def _expand(mult, rank):
    """Append singleton component axes so a multiplier broadcasts."""
    if rank == 0:
        return mult
    return mult.reshape(mult.shape + (1,) * rank)


def grad_values(grid, values):
    """Array-level spectral gradient; prepends the derivative axis."""
    values = np.asarray(values)
    rank = grid.rank_of(values)
    axes = tuple(range(grid.dim))
    spec = np.fft.rfftn(values, axes=axes)
    parts = [
        np.fft.irfftn(_expand(grid.deriv[a], rank) * spec, s=grid.shape, axes=axes)
        for a in range(grid.dim)
    ]
    return np.stack(parts, axis=grid.dim)


def spectral_gradient(field):
    """Gradient with the ``G[..., i, j] = d_i w_j`` layout, exact for
    resolved modes."""
    return Field(field.grid, grad_values(field.grid, field.values))


def div_values(grid, values):
    """Array-level divergence, contracting ``d_i`` with the first
    component axis."""
    values = np.asarray(values)
    rank = grid.rank_of(values)
    if rank < 1:
        raise ValueError("divergence requires rank >= 1")
    axes = tuple(range(grid.dim))
    spec = np.fft.rfftn(values, axes=axes)
    acc = None
    for a in range(grid.dim):
        term = _expand(grid.deriv[a], rank - 1) * np.take(spec, a, axis=grid.dim)
        acc = term if acc is None else acc + term
    return np.fft.irfftn(acc, s=grid.shape, axes=axes)


def divergence(field):
    return Field(field.grid, div_values(field.grid, field.values))


def leray_values(grid, values):
    """Array-level Leray-Hodge projection of a vector field.

    The mean (``k = 0``) mode passes through unchanged: constants are
    divergence-free on the torus.
    """
    values = np.asarray(values)
    if grid.rank_of(values) != 1:
        raise ValueError("leray projection applies to vector fields")
    axes = tuple(range(grid.dim))
    spec = np.fft.rfftn(values, axes=axes)
    kdotw = None
    for a in range(grid.dim):
        term = grid.k[a] * spec[..., a]
        kdotw = term if kdotw is None else kdotw + term
    kdotw = kdotw * grid.inv_k2
    for a in range(grid.dim):
        spec[..., a] -= grid.k[a] * kdotw
    return np.fft.irfftn(spec, s=grid.shape, axes=axes)


def leray_project(field):
    return Field(field.grid, leray_values(field.grid, field.values))


def dealias_values(grid, values):
    """Truncate a field to the 2/3 ball (sharp Fourier cutoff)."""
    values = np.asarray(values)
    rank = grid.rank_of(values)
    axes = tuple(range(grid.dim))
    spec = np.fft.rfftn(values, axes=axes)
    spec *= _expand(grid.dealias_mask, rank)
    return np.fft.irfftn(spec, s=grid.shape, axes=axes)


def dealias(field):
    return Field(field.grid, dealias_values(field.grid, field.values))


def dealiased_product_values(grid, a, b):
    """2/3-rule product: truncate both factors, multiply on the nodes,
    truncate the result.  Componentwise over any trailing axes that
    broadcast against each other."""
    a = dealias_values(grid, np.asarray(a))
    b = dealias_values(grid, np.asarray(b))
    return dealias_values(grid, a * b)


def dealiased_product(fa, fb):
    if fa.grid is not fb.grid and fa.grid != fb.grid:
        raise ValueError("fields live on different grids")
    return Field(fa.grid, dealiased_product_values(fa.grid, fa.values, fb.values))


def operator_norm(tensor):
    """Pointwise spectral (2-)norm of a ``(..., d, d)`` matrix field."""
    tensor = np.asarray(tensor)
    d = tensor.shape[-1]
    if tensor.shape[-2:] != (d, d):
        raise ValueError("expected trailing (d, d) matrix axes")
    if d == 2:
        # Closed form via the two singular values of a 2x2 matrix.
        a = tensor[..., 0, 0]
        b = tensor[..., 0, 1]
        c = tensor[..., 1, 0]
        e = tensor[..., 1, 1]
        frob2 = a * a + b * b + c * c + e * e
        det = a * e - b * c
        gap = np.sqrt(np.maximum(frob2 * frob2 - 4.0 * det * det, 0.0))
        return np.sqrt(np.maximum((frob2 + gap) / 2.0, 0.0))
    return np.linalg.norm(tensor, ord=2, axis=(-2, -1))


def _band_limited(grid, rng, kmax, shape_extra=()):
    """White noise restricted to the centered band ``|index| <= kmax``."""
    kmax = int(kmax)
    if kmax < 1 or kmax > grid.n // 2 - 1:
        raise ValueError(f"kmax must lie in [1, n/2 - 1], got {kmax}")
    noise = rng.standard_normal(grid.shape + tuple(shape_extra))
    axes = tuple(range(grid.dim))
    spec = np.fft.rfftn(noise, axes=axes)
    mask = np.ones(grid.spectral_shape, dtype=bool)
    for a in range(grid.dim):
        mask &= np.abs(grid.modes[a]) <= kmax
    spec *= _expand(mask, len(shape_extra))
    return np.fft.irfftn(spec, s=grid.shape, axes=axes)


def random_scalar(grid, rng, kmax=3, amplitude=1.0):
    """Seeded random band-limited scalar with unit (or given) sup norm."""
    vals = _band_limited(grid, rng, kmax)
    vals -= vals.mean()
    sup = np.max(np.abs(vals))
    if sup > 0:
        vals *= amplitude / sup
    return vals


def random_vector(grid, rng, kmax=3, amplitude=1.0):
    """Seeded random band-limited vector field, sup |w| normalized."""
    vals = _band_limited(grid, rng, kmax, shape_extra=(grid.dim,))
    vals -= vals.mean(axis=tuple(range(grid.dim)), keepdims=True)
    sup = np.max(np.sqrt(np.sum(vals**2, axis=-1)))
    if sup > 0:
        vals *= amplitude / sup
    return vals


def random_divergence_free(grid, rng, kmax=3, amplitude=1.0):
    """Seeded random band-limited divergence-free velocity, zero mean."""
    vals = leray_values(grid, _band_limited(grid, rng, kmax, (grid.dim,)))
    vals -= vals.mean(axis=tuple(range(grid.dim)), keepdims=True)
    sup = np.max(np.sqrt(np.sum(vals**2, axis=-1)))
    if sup > 0:
        vals *= amplitude / sup
    return vals


def random_displacement(grid, rng, grad_bound, kmax=3):
    """Seeded random displacement scaled to an exact gradient cap.

    Returns a band-limited vector field whose pointwise gradient operator
    norm attains ``grad_bound`` as its maximum over the nodes.
    """
    vals = _band_limited(grid, rng, kmax, shape_extra=(grid.dim,))
    vals -= vals.mean(axis=tuple(range(grid.dim)), keepdims=True)
    sup = np.max(operator_norm(grad_values(grid, vals)))
    if sup == 0.0:
        raise ValueError("degenerate draw: zero displacement")
    return vals * (float(grad_bound) / sup)
