"""Weber-type velocity reconstruction from displacement and transported
velocity.

The core map is ``W(v, ell) = P[(I + grad^T ell) v]`` where ``P`` is the
Leray-Hodge projection and ``(grad^T ell)_{ij} = d_i ell_j``.  Products
are dealiased with the 2/3 rule and the output is truncated to the same
ball, so the integration-by-parts identity

    P[(grad^T u) v] + P[(grad^T v) u] = P[grad(u . v)] = 0

holds to round-off for the discrete operators as well.

All heavy lifting runs on arrays with a leading batch axis (one entry
per Monte-Carlo path); the public field API wraps the batch of one.
"""

from __future__ import annotations

import numpy as np

from .grid import Field, leray_values, operator_norm

__all__ = ["weber", "ibp_residual", "weber_lipschitz_probe"]


def _spatial_axes(grid):
    return tuple(range(1, 1 + grid.dim))


def gradT_batched(grid, w):
    """Gradient-transpose of batched vector fields: output ``T`` has
    ``T[..., a, c] = d_a w_c``, truncated to the 2/3 ball."""
    axes = _spatial_axes(grid)
    what = np.fft.rfftn(w, axes=axes)
    d = grid.dim
    out = np.empty(w.shape[:-1] + (d, d))
    for c in range(d):
        comp = what[..., c] * grid.dealias_mask
        for a in range(d):
            out[..., a, c] = np.fft.irfftn(
                grid.deriv[a] * comp, s=grid.shape, axes=axes
            )
    return out


def leray_batched(grid, w):
    """Leray-Hodge projection of batched vector fields."""
    axes = _spatial_axes(grid)
    what = np.fft.rfftn(w, axes=axes)
    _project_spec(grid, what)
    return np.fft.irfftn(what, s=grid.shape, axes=axes).reshape(w.shape)


def div_batched(grid, w):
    """Divergence of batched vector fields."""
    axes = _spatial_axes(grid)
    what = np.fft.rfftn(w, axes=axes)
    acc = grid.deriv[0] * what[..., 0]
    for a in range(1, grid.dim):
        acc = acc + grid.deriv[a] * what[..., a]
    return np.fft.irfftn(acc, s=grid.shape, axes=axes)


def _project_spec(grid, what):
    """In-place projection of a batched spectral vector array."""
    kdotw = grid.k[0] * what[..., 0]
    for a in range(1, grid.dim):
        kdotw = kdotw + grid.k[a] * what[..., a]
    kdotw *= grid.inv_k2
    for a in range(grid.dim):
        what[..., a] -= grid.k[a] * kdotw


def weber_batched(grid, v, ell, gradT_ell=None):
    """Batched ``W(v, ell)``; ``v`` and ``ell`` are ``(B,) + shape + (d,)``.

    ``gradT_ell`` may carry a precomputed (dealiased) gradient-transpose
    of ``ell`` as produced by :func:`gradT_batched`; otherwise it is
    formed here mode by mode.
    """
    axes = _spatial_axes(grid)
    d = grid.dim
    mask = grid.dealias_mask

    vhat = np.fft.rfftn(v, axes=axes)
    for c in range(d):
        vhat[..., c] *= mask
    vt = np.fft.irfftn(vhat, s=grid.shape, axes=axes).reshape(v.shape)

    q = np.zeros_like(vt)
    if gradT_ell is None:
        ellhat = np.fft.rfftn(ell, axes=axes)
        for a in range(d):
            for c in range(d):
                # T[..., a, c] = d_a ell_c, formed mode-by-mode and
                # applied to the truncated v on the nodes.
                t_ac = np.fft.irfftn(
                    grid.deriv[a] * (ellhat[..., c] * mask),
                    s=grid.shape,
                    axes=axes,
                )
                q[..., a] += t_ac * vt[..., c]
    else:
        for a in range(d):
            for c in range(d):
                q[..., a] += gradT_ell[..., a, c] * vt[..., c]

    qhat = np.fft.rfftn(q, axes=axes)
    for c in range(d):
        qhat[..., c] = (vhat[..., c] + qhat[..., c] * mask)
    _project_spec(grid, qhat)
    return np.fft.irfftn(qhat, s=grid.shape, axes=axes).reshape(v.shape)


def weber(v, ell):
    """Velocity reconstruction ``W(v, ell) = P[(I + grad^T ell) v]``.

    With ``ell = 0`` this reduces to the plain Leray projection of a
    band-limited ``v``.  Output is divergence-free and truncated to the
    2/3 ball.
    """
    grid = v.grid
    if ell.grid != grid:
        raise ValueError("v and ell live on different grids")
    if v.rank != 1 or ell.rank != 1:
        raise ValueError("weber expects two vector fields")
    out = weber_batched(grid, v.values[None], ell.values[None])[0]
    return Field(grid, out)


def _gradT_times(grid, w, v):
    """Dealiased ``(grad^T w) v`` for single fields."""
    return np.einsum(
        "...ac,...c->...a",
        gradT_batched(grid, w[None])[0],
        np.fft.irfftn(
            np.fft.rfftn(v, axes=tuple(range(grid.dim)))
            * grid.dealias_mask[..., None],
            s=grid.shape,
            axes=tuple(range(grid.dim)),
        ),
    )


def ibp_residual(u, v):
    """Scaled residual of the integration-by-parts identity.

    Returns ``sup |P[(grad^T u) v] + P[(grad^T v) u]|`` divided by
    ``sup|grad u| sup|v| + sup|grad v| sup|u|``; zero when both fields
    are constant.
    """
    grid = u.grid
    if v.grid != grid:
        raise ValueError("u and v live on different grids")
    uv = leray_values(grid, _gradT_times(grid, u.values, v.values))
    vu = leray_values(grid, _gradT_times(grid, v.values, u.values))
    residual = float(np.sqrt(np.sum((uv + vu) ** 2, axis=-1)).max())

    gu = operator_norm(gradT_batched(grid, u.values[None])[0]).max()
    gv = operator_norm(gradT_batched(grid, v.values[None])[0]).max()
    su = np.sqrt(np.sum(u.values**2, axis=-1)).max()
    sv = np.sqrt(np.sum(v.values**2, axis=-1)).max()
    scale = float(gu * sv + gv * su)
    if scale == 0.0:
        return 0.0
    return residual / scale


def weber_lipschitz_probe(v1, ell1, v2, ell2, k=0, alpha=0.5):
    """Measure the Lipschitz behaviour of ``W`` in both arguments.

    Returns a dict with the left side ``|W(v1, ell1) - W(v2, ell2)|`` in
    the level-``k`` Hoelder norm and the two right-side terms
    ``(U / L) |ell1 - ell2|`` and ``|v1 - v2|`` (same norm), where ``U``
    is the larger level-``max(k, 1)`` norm of the two velocities.
    Inputs with ``sup |grad ell| >= 1`` are rejected: the probe only
    means anything inside the unit gradient ball.
    """
    from .diagnostics import holder_norm

    grid = v1.grid
    for f in (ell1, v2, ell2):
        if f.grid != grid:
            raise ValueError("probe fields live on different grids")
    from .grid import grad_values

    for ell in (ell1, ell2):
        sup = float(operator_norm(grad_values(grid, ell.values)).max())
        if sup >= 1.0:
            raise ValueError(
                f"sup |grad ell| = {sup:.4g} >= 1: probe outside the "
                f"contraction ball"
            )

    w1 = weber(v1, ell1)
    w2 = weber(v2, ell2)
    lhs = holder_norm(grid, w1.values - w2.values, k=k, alpha=alpha)
    u_level = max(k, 1)
    big_u = max(
        holder_norm(grid, v1.values, k=u_level, alpha=alpha),
        holder_norm(grid, v2.values, k=u_level, alpha=alpha),
    )
    rhs_ell = big_u / grid.length * holder_norm(
        grid, ell1.values - ell2.values, k=k, alpha=alpha
    )
    rhs_v = holder_norm(grid, v1.values - v2.values, k=k, alpha=alpha)
    denom = rhs_ell + rhs_v
    return {
        "lhs": lhs,
        "rhs_ell": rhs_ell,
        "rhs_v": rhs_v,
        "velocity_scale": big_u,
        "fitted_c": lhs / denom if denom > 0 else np.inf,
    }
