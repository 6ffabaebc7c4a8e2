"""Reference pseudo-spectral solver and the closed-form benchmark flows."""

import numpy as np
import pytest

from conftest import rel_l2
from stochflow import Field, TorusGrid
from stochflow.errors import CFLViolation
from stochflow.grid import (
    div_values,
    grad_values,
    leray_values,
    random_divergence_free,
)


def laplacian(grid, values):
    hess = grad_values(grid, grad_values(grid, values))
    return np.einsum("...aac->...c", hess)
from stochflow.reference import (
    reference_nse_solve,
    shear_exact,
    shear_mode,
    taylor_green,
    taylor_green_exact,
)


# ---------------------------------------------------------------------------
# benchmark fields
# ---------------------------------------------------------------------------


def test_exact_solutions_match_initial_fields(grid32):
    tg0 = taylor_green_exact(grid32, 1.3, nu=0.05, t=0.0)
    assert np.abs(tg0.values - taylor_green(grid32, 1.3).values).max() <= 1e-14
    sh0 = shear_exact(grid32, 0.7, nu=0.05, t=0.0, mode=2)
    assert np.abs(sh0.values - shear_mode(grid32, 0.7, mode=2).values).max() <= 1e-14


def test_benchmark_fields_are_divergence_free(grid32):
    for f in (taylor_green(grid32), shear_mode(grid32, mode=3)):
        assert np.abs(div_values(grid32, f.values)).max() <= 1e-12
    g3 = TorusGrid(dim=3, n=16, length=2 * np.pi)
    assert np.abs(div_values(g3, taylor_green(g3).values)).max() <= 1e-12


@pytest.mark.parametrize(
    "make,nu,decay_rate",
    [
        (taylor_green, 0.05, 2.0),  # two active wavenumbers
        (shear_mode, 0.05, 1.0),
    ],
)
def test_exact_solutions_satisfy_the_equations(grid32, make, nu, decay_rate):
    """Substitute the closed forms into d_t u + P[(u.grad)u] - nu Lap u = 0
    using the spectral operators; the residual must vanish."""
    t = 0.3
    u = make(grid32)
    decay = np.exp(-decay_rate * nu * t)
    ut = u.values * decay
    dudt = -decay_rate * nu * ut
    adv = np.einsum("...a,...ac->...c", ut, grad_values(grid32, ut))
    residual = dudt + leray_values(grid32, adv) - nu * laplacian(grid32, ut)
    assert np.abs(residual).max() <= 1e-12


# ---------------------------------------------------------------------------
# solver vs closed forms
# ---------------------------------------------------------------------------


def test_taylor_green_decay(grid32):
    hist = reference_nse_solve(taylor_green(grid32), nu=0.01,
                               t_final=0.25, n_steps=100)
    exact = taylor_green_exact(grid32, 1.0, nu=0.01, t=0.25)
    assert np.abs(hist.slices[-1] - exact.values).max() <= 1e-12


def test_shear_decay(grid32):
    hist = reference_nse_solve(shear_mode(grid32), nu=0.05,
                               t_final=0.25, n_steps=100)
    exact = shear_exact(grid32, 1.0, nu=0.05, t=0.25)
    assert np.abs(hist.slices[-1] - exact.values).max() <= 1e-12


def test_zero_velocity_stays_zero(grid32):
    u0 = Field(grid32, np.zeros(grid32.shape + (2,)))
    hist = reference_nse_solve(u0, nu=0.1, t_final=0.1, n_steps=10)
    assert np.abs(hist.slices).max() == 0.0


def test_inviscid_energy_conservation(grid32):
    rng = np.random.default_rng(7)
    u0 = Field(grid32, random_divergence_free(grid32, rng))
    hist = reference_nse_solve(u0, nu=0.0, t_final=0.1, n_steps=100)
    e0 = np.mean(np.sum(hist.slices[0] ** 2, axis=-1))
    e1 = np.mean(np.sum(hist.slices[-1] ** 2, axis=-1))
    assert abs(e1 - e0) / e0 <= 1e-10


def test_time_stepping_is_fourth_order(grid32):
    rng = np.random.default_rng(7)
    u0 = Field(grid32, random_divergence_free(grid32, rng))
    fine = reference_nse_solve(u0, nu=0.0, t_final=0.1, n_steps=800)
    errs, dts = [], []
    for n_steps in (5, 10, 20, 40):
        hist = reference_nse_solve(u0, nu=0.0, t_final=0.1, n_steps=n_steps)
        errs.append(rel_l2(hist.slices[-1], fine.slices[-1]))
        dts.append(0.1 / n_steps)
    slope = np.polyfit(np.log(dts), np.log(errs), 1)[0]
    assert abs(slope - 4.0) <= 0.3


def test_mean_velocity_advects_the_pattern(grid32):
    """Nonzero spatial mean: the vortex array rides along x - c t while
    decaying, and the mean itself is conserved exactly."""
    c = np.array([0.4, -0.25])
    nu, t_final = 0.01, 0.1
    u0 = Field(grid32, taylor_green(grid32).values + c)
    hist = reference_nse_solve(u0, nu=nu, t_final=t_final, n_steps=100)
    shifted = grid32.coords - c * t_final
    decay = np.exp(-2.0 * nu * t_final)
    exact = decay * np.stack(
        [
            np.sin(shifted[..., 0]) * np.cos(shifted[..., 1]),
            -np.cos(shifted[..., 0]) * np.sin(shifted[..., 1]),
        ],
        axis=-1,
    ) + c
    assert np.abs(hist.slices[-1] - exact).max() <= 1e-12
    final_mean = hist.slices[-1].reshape(-1, 2).mean(axis=0)
    assert np.abs(final_mean - c).max() <= 1e-14


def test_three_dimensional_shear_decay():
    g3 = TorusGrid(dim=3, n=16, length=2 * np.pi)
    hist = reference_nse_solve(shear_mode(g3), nu=0.1, t_final=0.1,
                               n_steps=20)
    exact = shear_exact(g3, 1.0, nu=0.1, t=0.1)
    assert np.abs(hist.slices[-1] - exact.values).max() <= 1e-12


# ---------------------------------------------------------------------------
# guard rails
# ---------------------------------------------------------------------------


def test_cfl_violation_aborts(grid32):
    fast = taylor_green(grid32, amplitude=50.0)
    with pytest.raises(CFLViolation) as err:
        reference_nse_solve(fast, nu=0.0, t_final=0.1, n_steps=10)
    assert err.value.cfl > err.value.cap


def test_parameter_validation(grid32):
    u0 = taylor_green(grid32)
    with pytest.raises(ValueError):
        reference_nse_solve(u0, nu=-0.1, t_final=0.1, n_steps=10)
    with pytest.raises(ValueError):
        reference_nse_solve(u0, nu=0.1, t_final=0.0, n_steps=10)
    with pytest.raises(ValueError):
        reference_nse_solve(u0, nu=0.1, t_final=0.1, n_steps=0)
    scalar = Field(grid32, np.zeros(grid32.shape))
    with pytest.raises(ValueError):
        reference_nse_solve(scalar, nu=0.1, t_final=0.1, n_steps=10)
