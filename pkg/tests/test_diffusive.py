"""Deterministic diffusive-Lagrangian solver and its building blocks."""

import numpy as np
import pytest

from conftest import (
    constant_values,
    rel_l2,
    shear_field,
    shear_values,
    taylor_green_field,
    taylor_green_values,
)
from stochflow import Field, TorusGrid
from stochflow.diffusive import (
    DiffusiveConfig,
    advance_displacement,
    advance_virtual_velocity,
    commutator,
    commutator_values,
    neumann_inverse,
    solve_diffusive,
)
from stochflow.errors import SingularMatrix, StochflowError
from stochflow.grid import grad_values, random_divergence_free


# ---------------------------------------------------------------------------
# Neumann series inverse
# ---------------------------------------------------------------------------


def test_neumann_inverse_matches_direct():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((50, 2, 2))
    norms = np.linalg.norm(x, ord=2, axis=(-2, -1))
    targets = rng.uniform(0.05, 0.45, size=50)
    x *= (targets / norms)[..., None, None]
    eye = np.eye(2)
    direct = np.linalg.inv(eye + x)
    assert np.abs(neumann_inverse(x) - direct).max() <= 1e-10


def test_neumann_inverse_norm_bound():
    """Operator norm of (I + x)^-1 is at most 1 / (1 - |x|)."""
    rng = np.random.default_rng(1)
    for _ in range(20):
        x = rng.standard_normal((2, 2))
        nx = np.linalg.norm(x, ord=2)
        x *= 0.8 * rng.uniform(0.1, 1.0) / nx
        nx = np.linalg.norm(x, ord=2)
        inv_norm = np.linalg.norm(neumann_inverse(x), ord=2)
        assert inv_norm <= 1.0 / (1.0 - nx) + 1e-9


# ---------------------------------------------------------------------------
# commutator coefficients
# ---------------------------------------------------------------------------


def test_commutator_vanishes_for_rigid_displacements(grid32):
    zero = np.zeros(grid32.shape + (2,))
    assert np.abs(commutator_values(grid32, zero)).max() == 0.0
    shift = constant_values(grid32, [0.3, -0.7])
    assert np.abs(commutator_values(grid32, shift)).max() <= 1e-13


def test_commutator_single_mode_closed_form(grid32):
    """ell = eps (sin y, 0): the exact coefficients have one entry,
    C[..., y, y, x] = -eps sin y (the Jacobian correction is nilpotent)."""
    eps = 0.2
    y = grid32.coords[..., 1]
    ell = np.stack([eps * np.sin(y), np.zeros_like(y)], axis=-1)
    c = commutator_values(grid32, ell)
    expected = np.zeros_like(c)
    expected[..., 1, 1, 0] = -eps * np.sin(y)
    assert np.abs(c - expected).max() <= 1e-12


def test_commutator_first_order_is_displacement_hessian(grid16):
    eps = 1e-4
    x = grid16.coords[..., 0]
    y = grid16.coords[..., 1]
    ell = eps * np.stack(
        [np.sin(x + y), np.cos(2 * x) * np.sin(y)], axis=-1
    )
    c = commutator_values(grid16, ell)
    hess = grad_values(grid16, grad_values(grid16, ell))
    # c[..., i, j, p] = hess[..., i, j, p] + O(eps^2)
    assert np.abs(c - hess).max() <= 10 * eps**2


def test_commutator_matches_neumann_series_oracle(grid16):
    rng = np.random.default_rng(5)
    ell = 0.25 * random_divergence_free(grid16, rng)
    g = grad_values(grid16, ell)  # g[..., a, c] = d_a ell_c
    jac_minus_eye = np.swapaxes(g, -1, -2)  # x[k, i] = d_i ell_k
    inv = neumann_inverse(jac_minus_eye, terms=200)
    hess = grad_values(grid16, g)
    oracle = np.einsum("...ki,...kjp->...ijp", inv, hess)
    assert np.abs(commutator_values(grid16, ell) - oracle).max() <= 1e-10


def test_commutator_rejects_steep_displacement(grid32):
    y = grid32.coords[..., 1]
    ell = np.stack([1.2 * np.sin(y), np.zeros_like(y)], axis=-1)
    with pytest.raises(SingularMatrix):
        commutator_values(grid32, ell)


def test_commutator_field_wrapper(grid16):
    y = grid16.coords[..., 1]
    ell = Field(
        grid16, np.stack([0.1 * np.sin(y), np.zeros_like(y)], axis=-1)
    )
    out = commutator(ell)
    assert out.values.shape == grid16.shape + (2, 2, 2)


# ---------------------------------------------------------------------------
# displacement advance
# ---------------------------------------------------------------------------


def test_displacement_pure_diffusion_is_exact(grid32):
    nu, dt = 0.3, 0.05
    y = grid32.coords[..., 1]
    ell = np.stack([0.3 * np.sin(y), np.zeros_like(y)], axis=-1)
    zero_u = Field(grid32, np.zeros(grid32.shape + (2,)))
    out = advance_displacement(ell, zero_u, zero_u, nu, dt)
    assert np.abs(out - np.exp(-nu * dt) * ell).max() <= 1e-14


def test_displacement_constant_drift_exact(grid32):
    c = np.array([0.5, -0.2])
    u = Field(grid32, constant_values(grid32, c))
    ell = np.zeros(grid32.shape + (2,))
    dt = 0.05
    out = advance_displacement(ell, u, u, 0.0, dt)
    assert np.abs(out + c * dt).max() <= 1e-14


def test_displacement_step_is_second_order(grid32):
    u = shear_field(grid32)
    x = grid32.coords[..., 0]
    ell0 = 0.05 * np.stack([np.sin(x + grid32.coords[..., 1]),
                            np.cos(x)], axis=-1)

    def advance(dt_total, substeps):
        e = ell0.copy()
        h = dt_total / substeps
        for _ in range(substeps):
            e = advance_displacement(e, u, u, 0.01, h)
        return e

    fine = advance(0.02, 100)
    e1 = np.abs(advance(0.02, 1) - fine).max()
    e2 = np.abs(advance(0.02, 2) - fine).max()
    assert e1 <= 1e-6
    assert 3.4 <= e1 / e2 <= 4.6  # halving dt cuts the error ~4x


def test_displacement_trust_region_exit(grid32):
    u = shear_field(grid32)
    ell = np.zeros(grid32.shape + (2,))
    from stochflow.errors import BallExit

    with pytest.raises(BallExit) as err:
        advance_displacement(ell, u, u, 0.0, 0.2,
                             remap_threshold=0.05, t_now=0.3)
    assert err.value.t_star == pytest.approx(0.3)
    assert err.value.sup_grad >= 0.05


def test_displacement_type_round_trip(grid32):
    """ndarray in -> ndarray out; Field in -> Field out."""
    u = shear_field(grid32, 0.1)
    raw = np.zeros(grid32.shape + (2,))
    assert isinstance(advance_displacement(raw, u, u, 0.0, 0.01), np.ndarray)
    out = advance_displacement(Field(grid32, raw), u, u, 0.0, 0.01)
    assert isinstance(out, Field)


# ---------------------------------------------------------------------------
# virtual-velocity advance
# ---------------------------------------------------------------------------


def test_virtual_velocity_heat_decay_exact(grid32):
    nu, dt = 0.2, 0.05
    y = grid32.coords[..., 1]
    v = np.stack([np.sin(y), np.zeros_like(y)], axis=-1)
    zero_u = Field(grid32, np.zeros(grid32.shape + (2,)))
    c0 = np.zeros(grid32.shape + (2, 2, 2))
    out = advance_virtual_velocity(v, zero_u, zero_u, c0, nu, dt)
    assert np.abs(out - np.exp(-nu * dt) * v).max() <= 1e-13


def test_virtual_velocity_translation_oracle(grid32):
    c = np.array([0.5, -0.3])
    u = Field(grid32, constant_values(grid32, c))
    x = grid32.coords[..., 0]
    y = grid32.coords[..., 1]
    v = np.stack([np.sin(x), np.cos(y)], axis=-1)
    c0 = np.zeros(grid32.shape + (2, 2, 2))
    dt = 0.01
    out = advance_virtual_velocity(v, u, u, c0, 0.0, dt)
    exact = np.stack(
        [np.sin(x - c[0] * dt), np.cos(y - c[1] * dt)], axis=-1
    )
    assert np.abs(out - exact).max() <= 1e-6


# ---------------------------------------------------------------------------
# full solver
# ---------------------------------------------------------------------------


def test_solve_constant_initial_data(grid32):
    c = np.array([0.8, 0.1])
    u0 = Field(grid32, constant_values(grid32, c))
    cfg = DiffusiveConfig(nu=0.1, dt=0.05, t_final=0.2)
    res = solve_diffusive(u0, cfg)
    assert np.abs(res.history.slices - c).max() <= 1e-13
    assert res.reports[0].iterations == 1


def test_solve_taylor_green_decay(grid32):
    u0 = taylor_green_field(grid32)
    cfg = DiffusiveConfig(nu=0.01, dt=0.01, t_final=0.1)
    res = solve_diffusive(u0, cfg)
    exact = np.exp(-2 * 0.01 * 0.1) * taylor_green_values(grid32)
    assert np.abs(res.history.slices[-1] - exact).max() <= 2e-6
    assert res.history.max_divergence() <= 1e-9


def test_solve_shear_decay_is_exact(grid32):
    """Single shear mode: advection, commutator source, and Weber
    correction all vanish identically, so only the exact integrating
    factor acts and the discrete solution matches e^{-nu t} sin y to
    round-off."""
    u0 = shear_field(grid32)
    cfg = DiffusiveConfig(nu=0.05, dt=0.01, t_final=0.1)
    res = solve_diffusive(u0, cfg)
    exact = np.exp(-0.05 * 0.1) * shear_values(grid32)
    assert np.abs(res.history.slices[-1] - exact).max() <= 1e-12


def test_solve_matches_reference_on_random_data(grid32):
    from stochflow.reference import reference_nse_solve

    rng = np.random.default_rng(42)
    u0 = Field(grid32, random_divergence_free(grid32, rng))
    cfg = DiffusiveConfig(nu=0.02, dt=0.005, t_final=0.1)
    res = solve_diffusive(u0, cfg)
    ref = reference_nse_solve(u0, nu=0.02, t_final=0.1, n_steps=200)
    assert rel_l2(res.history.slices[-1], ref.slices[-1]) <= 1e-5


def test_windowed_restart_boundaries(grid32):
    """Inviscid steady shear: sup |grad ell| grows like t, so a 0.2
    threshold forces restarts roughly every 0.175 time units."""
    u0 = shear_field(grid32)
    cfg = DiffusiveConfig(nu=0.0, dt=0.025, t_final=0.5,
                          remap_threshold=0.2)
    res = solve_diffusive(u0, cfg)
    assert len(res.boundaries) >= 3
    assert res.boundaries[0] == 0.0
    assert res.boundaries[-1] == pytest.approx(0.5)
    assert all(rep.converged for rep in res.reports)
    # steady solution survives the restarts
    assert np.abs(res.history.slices[-1] - u0.values).max() <= 1e-12


def test_restart_does_not_change_the_solution(grid32):
    u0 = shear_field(grid32)
    loose = DiffusiveConfig(nu=0.0, dt=0.025, t_final=0.5,
                            remap_threshold=0.45)
    tight = DiffusiveConfig(nu=0.0, dt=0.025, t_final=0.5,
                            remap_threshold=0.2)
    r_loose = solve_diffusive(u0, loose)
    r_tight = solve_diffusive(u0, tight)
    assert len(r_tight.boundaries) > len(r_loose.boundaries)
    assert np.abs(
        r_tight.history.slices[-1] - r_loose.history.slices[-1]
    ).max() <= 1e-12


def test_first_step_ball_exit_suggests_smaller_dt(grid32):
    u0 = shear_field(grid32)
    cfg = DiffusiveConfig(nu=0.0, dt=0.05, t_final=0.1,
                          remap_threshold=0.01)
    with pytest.raises(StochflowError, match="reduce dt"):
        solve_diffusive(u0, cfg)


def test_initial_data_must_be_divergence_free(grid32):
    x = grid32.coords[..., 0]
    bad = Field(grid32, np.stack([np.sin(x), np.zeros_like(x)], axis=-1))
    cfg = DiffusiveConfig(nu=0.01, dt=0.05, t_final=0.1)
    with pytest.raises(ValueError, match="divergence-free"):
        solve_diffusive(bad, cfg)


def test_config_validation():
    with pytest.raises(ValueError):
        DiffusiveConfig(nu=-0.1, dt=0.01, t_final=0.1)
    with pytest.raises(ValueError):
        DiffusiveConfig(nu=0.1, dt=0.03, t_final=0.1)  # dt not a divisor
    with pytest.raises(ValueError):
        DiffusiveConfig(nu=0.1, dt=0.01, t_final=0.1, remap_threshold=0.5)
    assert DiffusiveConfig(nu=0.1, dt=0.01, t_final=0.1).n_steps == 10
