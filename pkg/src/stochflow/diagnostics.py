"""Discrete norms, error metrics, rate fits, and the inequality ledger.

The scaled norms follow the dimensionless convention in which every
derivative order carries a factor of the period ``L`` and the Hoelder
seminorm carries ``L^alpha``:

    |f|_alpha   = sup_pairs  L^alpha |f(x) - f(y)| / dist(x, y)^alpha
    ||f||_k     = sum_{|m| <= k}  L^|m| sup |D^m f|
    ||f||_k,a   = ||f||_k + sum_{|m| = k} L^k |D^m f|_alpha

Distances are geodesic on the torus.  The discrete seminorm maximizes
over all nearest-neighbour node pairs plus a seeded set of random node
pairs, so it is a lower bound of the continuum seminorm that can only
grow when more pairs are added.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations_with_replacement

import numpy as np

from .grid import operator_norm

__all__ = [
    "NormReport",
    "FitResult",
    "neighbor_pairs",
    "random_node_pairs",
    "holder_seminorm",
    "holder_norm",
    "discrete_norms",
    "error_metrics",
    "fit_rate",
    "kinetic_energy",
    "lemma_harness",
    "LEMMA_IDS",
]


@dataclass(frozen=True)
class NormReport:
    """Scaled sup norms of one field at derivative levels 0, 1, 2."""

    c0: float
    c1: float
    c2: float
    holder_seminorm: float
    alpha: float

    def level(self, k):
        return (self.c0, self.c1, self.c2)[k]


def _values_of(f):
    return f.values if hasattr(f, "values") else np.asarray(f, dtype=np.float64)


def _pointwise_magnitude(grid, values):
    """Euclidean magnitude over all component axes."""
    flat = values.reshape(grid.shape + (-1,))
    return np.sqrt(np.sum(flat**2, axis=-1))


def neighbor_pairs(grid):
    """All nearest-neighbour node pairs, one per node per axis."""
    base = np.indices(grid.shape).reshape(grid.dim, -1).T
    pairs = []
    for a in range(grid.dim):
        shifted = base.copy()
        shifted[:, a] = (shifted[:, a] + 1) % grid.n
        pairs.append(np.stack([base, shifted], axis=1))
    return np.concatenate(pairs, axis=0)


def random_node_pairs(grid, count=4096, seed=0):
    """Seeded random node pairs; degenerate draws are nudged apart.

    Indices scale with the resolution, so pairs drawn on a coarse grid
    can be mapped onto any refinement by multiplying the indices.
    """
    rng = np.random.default_rng(seed)
    pairs = rng.integers(0, grid.n, size=(int(count), 2, grid.dim))
    same = np.all(pairs[:, 0] == pairs[:, 1], axis=-1)
    pairs[same, 1, 0] = (pairs[same, 1, 0] + 1) % grid.n
    return pairs


def _pair_values(grid, values, pairs):
    flat = values.reshape((grid.num_nodes, -1))
    lin_a = np.ravel_multi_index(tuple(pairs[:, 0].T), grid.shape)
    lin_b = np.ravel_multi_index(tuple(pairs[:, 1].T), grid.shape)
    diff = flat[lin_a] - flat[lin_b]
    delta = np.abs(pairs[:, 0] - pairs[:, 1]) * grid.h
    delta = np.minimum(delta, grid.length - delta)
    dist = np.sqrt(np.sum(delta**2, axis=-1))
    return np.sqrt(np.sum(diff**2, axis=-1)), dist


def holder_seminorm(grid, values, alpha=0.5, pairs=None, seed=0, num_random=4096):
    """Discrete Hoelder-``alpha`` seminorm (a lower bound: the maximum is
    taken over nearest-neighbour pairs plus seeded random pairs only)."""
    values = _values_of(values)
    if pairs is None:
        pairs = np.concatenate(
            [neighbor_pairs(grid), random_node_pairs(grid, num_random, seed)]
        )
    jumps, dist = _pair_values(grid, values, pairs)
    ok = dist > 0
    if not np.any(ok):
        return 0.0
    ratio = jumps[ok] / dist[ok] ** alpha
    return float(grid.length**alpha * ratio.max())


def _multi_indices(dim, order):
    out = []
    for combo in combinations_with_replacement(range(dim), order):
        m = [0] * dim
        for a in combo:
            m[a] += 1
        out.append(tuple(m))
    return out


def _derivative(grid, values, m):
    """Spectral mixed derivative ``D^m`` of a field of any rank."""
    rank = grid.rank_of(values)
    axes = tuple(range(grid.dim))
    spec = np.fft.rfftn(values, axes=axes)
    mult = np.ones(grid.spectral_shape, dtype=np.complex128)
    for a, power in enumerate(m):
        for _ in range(power):
            mult = mult * grid.deriv[a]
    if rank:
        mult = mult.reshape(mult.shape + (1,) * rank)
    return np.fft.irfftn(spec * mult, s=grid.shape, axes=axes)


def _sup_derivatives(grid, values, order):
    """List of ``sup |D^m f|`` over all multi-indices of a given order."""
    return [
        float(_pointwise_magnitude(grid, _derivative(grid, values, m)).max())
        for m in _multi_indices(grid.dim, order)
    ]


def discrete_norms(grid, values, alpha=0.5, pairs=None, seed=0, num_random=4096):
    """Scaled C0/C1/C2 norms and the Hoelder seminorm of one field."""
    values = _values_of(values)
    grid.rank_of(values)
    c0 = float(_pointwise_magnitude(grid, values).max())
    c1 = c0 + grid.length * sum(_sup_derivatives(grid, values, 1))
    c2 = c1 + grid.length**2 * sum(_sup_derivatives(grid, values, 2))
    semi = holder_seminorm(
        grid, values, alpha=alpha, pairs=pairs, seed=seed, num_random=num_random
    )
    return NormReport(c0=c0, c1=c1, c2=c2, holder_seminorm=semi, alpha=alpha)


def holder_norm(grid, values, k=0, alpha=0.5, pairs=None, seed=0, num_random=4096):
    """Full scaled ``C^{k, alpha}`` norm (k in {0, 1, 2})."""
    values = _values_of(values)
    if k not in (0, 1, 2):
        raise ValueError(f"holder_norm supports k in 0..2, got {k}")
    total = float(_pointwise_magnitude(grid, values).max())
    for order in range(1, k + 1):
        total += grid.length**order * sum(_sup_derivatives(grid, values, order))
    weight = grid.length**k
    if k == 0:
        tops = [values]
    else:
        tops = [_derivative(grid, values, m) for m in _multi_indices(grid.dim, k)]
    for top in tops:
        total += weight * holder_seminorm(
            grid, top, alpha=alpha, pairs=pairs, seed=seed, num_random=num_random
        )
    return total


def error_metrics(grid, u, ref, alpha=0.5):
    """Relative L2 / C0 errors and the Hoelder seminorm of the difference."""
    u = _values_of(u)
    ref = _values_of(ref)
    diff = u - ref
    ref_l2 = float(np.sqrt(np.mean(ref**2)))
    ref_c0 = float(_pointwise_magnitude(grid, ref).max())
    err_l2 = float(np.sqrt(np.mean(diff**2)))
    err_c0 = float(_pointwise_magnitude(grid, diff).max())
    return {
        "l2": err_l2,
        "c0": err_c0,
        "l2_rel": err_l2 / ref_l2 if ref_l2 > 0 else np.inf,
        "c0_rel": err_c0 / ref_c0 if ref_c0 > 0 else np.inf,
        "holder": holder_seminorm(grid, diff, alpha=alpha),
    }


def kinetic_energy(grid, values):
    """Mean kinetic energy density ``0.5 <|u|^2>``."""
    values = _values_of(values)
    return float(0.5 * np.mean(np.sum(values**2, axis=-1)))


@dataclass(frozen=True)
class FitResult:
    """Least-squares power law ``y ~ prefactor * x^exponent``."""

    exponent: float
    prefactor: float
    r2: float


def fit_rate(xs, ys):
    """Log-log least-squares rate fit with coefficient of determination."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.size != ys.size or xs.size < 2:
        raise ValueError("fit_rate needs two same-length samples at least")
    if np.any(xs <= 0) or np.any(ys <= 0):
        raise ValueError("fit_rate needs positive data")
    lx = np.log(xs)
    ly = np.log(ys)
    slope, intercept = np.polyfit(lx, ly, 1)
    fitted = slope * lx + intercept
    ss_res = float(np.sum((ly - fitted) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return FitResult(exponent=float(slope), prefactor=float(np.exp(intercept)), r2=r2)


LEMMA_IDS = (
    "compose-norm",
    "compose-diff",
    "inverse-lip",
    "grad-growth",
    "flow-stability",
    "weber-norm",
    "weber-lip",
)


def _harness_draw(grid, rng, alpha, family):
    """One (lhs, rhs_core) sample for one inequality family."""
    from .flowmap import DisplacementMap, integrate_flow, invert_map
    from .grid import (
        Field,
        grad_values,
        random_displacement,
        random_divergence_free,
        random_vector,
    )
    from .histories import VelocityHistory
    from .interp import interp_values
    from .weber import weber, weber_lipschitz_probe

    L = grid.length
    if family == "compose-norm":
        f = random_vector(grid, rng, kmax=3)
        lam = random_displacement(grid, rng, grad_bound=0.4, kmax=2)
        g_of_x = grid.coords + lam
        composed = interp_values(grid, f, g_of_x)
        lhs = holder_norm(grid, composed, k=1, alpha=alpha)
        grad_g = grad_values(grid, lam)
        for a in range(grid.dim):
            grad_g[..., a, a] += 1.0
        rhs = holder_norm(grid, f, k=1, alpha=alpha) * (
            1.0 + holder_norm(grid, grad_g, k=0, alpha=alpha)
        ) ** (1 + alpha)
        return lhs, rhs
    if family == "compose-diff":
        f = random_vector(grid, rng, kmax=3)
        lam1 = random_displacement(grid, rng, grad_bound=0.35, kmax=2)
        lam2 = lam1 + random_displacement(grid, rng, grad_bound=0.05, kmax=2)
        c1 = interp_values(grid, f, grid.coords + lam1)
        c2 = interp_values(grid, f, grid.coords + lam2)
        lhs = holder_norm(grid, c1 - c2, k=0, alpha=alpha)
        sup_grad = max(
            1.0 + holder_norm(grid, grad_values(grid, lam), k=0, alpha=alpha)
            for lam in (lam1, lam2)
        )
        rhs = (
            holder_norm(grid, f, k=1, alpha=alpha)
            / L
            * sup_grad
            * holder_norm(grid, lam1 - lam2, k=0, alpha=alpha)
        )
        return lhs, rhs
    if family == "inverse-lip":
        lam1 = random_displacement(grid, rng, grad_bound=0.5, kmax=2)
        lam2 = lam1 + random_displacement(grid, rng, grad_bound=0.2, kmax=2)
        sup2 = operator_norm(grad_values(grid, lam2)).max()
        if sup2 > 0.5:
            lam2 *= 0.5 / sup2
        ell1 = invert_map(DisplacementMap(Field(grid, lam1))).values
        ell2 = invert_map(DisplacementMap(Field(grid, lam2))).values
        lhs = float(np.sqrt(np.sum((ell1 - ell2) ** 2, axis=-1)).max())
        rhs = float(np.sqrt(np.sum((lam1 - lam2) ** 2, axis=-1)).max())
        return lhs, rhs
    if family in ("grad-growth", "flow-stability"):
        from .flowmap import BrownianDriver

        t_final = 0.1
        steps = 10
        times = np.linspace(0.0, t_final, steps + 1)
        u1 = random_divergence_free(grid, rng, kmax=2)
        hist1 = VelocityHistory(
            grid, times, np.repeat(u1[None], steps + 1, axis=0)
        )
        driver = BrownianDriver(
            seed=int(rng.integers(2**31)), path_index=0, dt=float(times[1]),
            n_steps=steps, dim=grid.dim,
        )
        traj1 = integrate_flow(hist1, driver, nu=0.0)
        if family == "grad-growth":
            lam = traj1.displacement(-1)
            lhs = float(operator_norm(grad_values(grid, lam)).max())
            u_hat = L * operator_norm(grad_values(grid, u1)).max()
            rhs = float(np.expm1(u_hat * t_final / L))
            return lhs, rhs
        u2 = u1 + 0.2 * random_divergence_free(grid, rng, kmax=2)
        hist2 = VelocityHistory(
            grid, times, np.repeat(u2[None], steps + 1, axis=0)
        )
        traj2 = integrate_flow(hist2, driver, nu=0.0)
        lhs = max(
            float(
                np.sqrt(
                    np.sum(
                        (traj1.displacement(k) - traj2.displacement(k)) ** 2,
                        axis=-1,
                    )
                ).max()
            )
            for k in range(1, steps + 1)
        )
        u_hat = L * max(
            operator_norm(grad_values(grid, u1)).max(),
            operator_norm(grad_values(grid, u2)).max(),
        )
        diff_sup = float(np.sqrt(np.sum((u1 - u2) ** 2, axis=-1)).max())
        rhs = float(np.exp(u_hat * t_final / L) * diff_sup * t_final)
        return lhs, rhs
    if family == "weber-norm":
        v = random_vector(grid, rng, kmax=3)
        ell = random_displacement(grid, rng, grad_bound=0.4, kmax=2)
        w = weber(Field(grid, v), Field(grid, ell))
        lhs = holder_norm(grid, w.values, k=1, alpha=alpha)
        rhs = (
            1.0 + holder_norm(grid, grad_values(grid, ell), k=0, alpha=alpha)
        ) * holder_norm(grid, v, k=1, alpha=alpha)
        return lhs, rhs
    if family == "weber-lip":
        v1 = random_vector(grid, rng, kmax=3)
        v2 = v1 + 0.1 * random_vector(grid, rng, kmax=3)
        ell1 = random_displacement(grid, rng, grad_bound=0.3, kmax=2)
        ell2 = ell1 + random_displacement(grid, rng, grad_bound=0.1, kmax=2)
        probe = weber_lipschitz_probe(
            Field(grid, v1), Field(grid, ell1),
            Field(grid, v2), Field(grid, ell2),
            k=0, alpha=alpha,
        )
        return probe["lhs"], probe["rhs_ell"] + probe["rhs_v"]
    raise ValueError(f"unknown family {family!r}")


def lemma_harness(
    n_values=(32, 64),
    draws=50,
    seed=0,
    alpha=0.5,
    length=2.0 * np.pi,
    dim=2,
    families=LEMMA_IDS,
    out_csv=None,
):
    """Fit the constants of the composition/inversion/flow inequalities.

    For every family and every grid in ``n_values``, performs ``draws``
    seeded random draws, records ``fitted_c = lhs / rhs_core`` and
    returns ``{family: list of rows}``.  The CSV (optional) has columns
    ``lemma_id, n, draw, lhs, rhs_core, fitted_c``.  Stability of the
    fitted constants (bounded max/min ratio across draws and grids) is
    what the acceptance suite asserts.
    """
    from .grid import TorusGrid

    results = {family: [] for family in families}
    for family in families:
        family_key = LEMMA_IDS.index(family) if family in LEMMA_IDS else 97
        for n in n_values:
            grid = TorusGrid(dim=dim, n=int(n), length=length)
            rng = np.random.default_rng([seed, family_key, int(n)])
            for draw in range(draws):
                lhs, rhs = _harness_draw(grid, rng, alpha, family)
                if rhs <= 0:
                    raise ValueError(f"degenerate rhs in family {family}")
                results[family].append(
                    {
                        "lemma_id": family,
                        "n": int(n),
                        "draw": draw,
                        "lhs": lhs,
                        "rhs_core": rhs,
                        "fitted_c": lhs / rhs,
                    }
                )
    if out_csv is not None:
        with open(out_csv, "w", encoding="utf-8") as fh:
            fh.write("lemma_id,n,draw,lhs,rhs_core,fitted_c\n")
            for family in families:
                for row in results[family]:
                    fh.write(
                        f"{row['lemma_id']},{row['n']},{row['draw']},"
                        f"{row['lhs']!r},{row['rhs_core']!r},"
                        f"{row['fitted_c']!r}\n"
                    )
    return results
