"""Stochastic Lagrangian solvers for incompressible flow on the torus.

The package builds the velocity field of the incompressible
Navier-Stokes equations as an expectation over noisy characteristics:
particle maps driven by the velocity plus Brownian noise are inverted,
the initial velocity is pulled back along the inverse map, and a
divergence-free projection of the transported momentum (the Weber
operator) recovers the velocity.  A Picard iteration closes the loop.
The same transport structure also runs noise-free (classical
characteristics for the Euler equations) and in a deterministic
diffusive form where the displacement and a virtual velocity satisfy
forced heat equations.  A conventional pseudo-spectral reference solver
and an experiment harness round out the toolkit.
"""

from .config import parse_config, resolve
from .diagnostics import (
    FitResult,
    NormReport,
    discrete_norms,
    error_metrics,
    fit_rate,
    holder_norm,
    holder_seminorm,
    kinetic_energy,
    lemma_harness,
)
from .diffusive import (
    DiffusiveConfig,
    advance_displacement,
    advance_virtual_velocity,
    commutator,
    commutator_values,
    solve_diffusive,
)
from .errors import (
    BallExit,
    CFLViolation,
    ConfigError,
    NoConvergence,
    NotInvertible,
    RemapRequired,
    SingularMatrix,
    StochflowError,
)
from .experiments import (
    contraction_experiment,
    equivalence_experiment,
    inviscid_limit_experiment,
    mc_scaling_experiment,
)
from .flowmap import (
    BrownianDriver,
    DisplacementMap,
    FlowTrajectory,
    integrate_flow,
    integrate_gradient,
    invert_map,
)
from .grid import (
    Field,
    SpectralField,
    TorusGrid,
    dealias,
    dealiased_product,
    divergence,
    fft_forward,
    fft_inverse,
    leray_project,
    operator_norm,
    random_divergence_free,
    random_displacement,
    random_scalar,
    random_vector,
    spectral_gradient,
)
from .histories import AnalyticDrift, ConvergenceReport, VelocityHistory
from .interp import evaluate_offgrid, interp_values
from .reference import (
    reference_nse_solve,
    shear_exact,
    shear_mode,
    taylor_green,
    taylor_green_exact,
)
from .snapshot import describe, read_snapshot, write_snapshot
from .stochastic import (
    StochasticConfig,
    WindowedResult,
    picard_step,
    reconstruct_velocity,
    solve,
    solve_euler,
    solve_windowed,
)
from .weber import ibp_residual, weber, weber_lipschitz_probe

__version__ = "0.1.0"

__all__ = [
    "AnalyticDrift",
    "BallExit",
    "BrownianDriver",
    "CFLViolation",
    "ConfigError",
    "ConvergenceReport",
    "DiffusiveConfig",
    "DisplacementMap",
    "Field",
    "FitResult",
    "FlowTrajectory",
    "NoConvergence",
    "NormReport",
    "NotInvertible",
    "RemapRequired",
    "SingularMatrix",
    "SpectralField",
    "StochasticConfig",
    "StochflowError",
    "TorusGrid",
    "VelocityHistory",
    "WindowedResult",
    "advance_displacement",
    "advance_virtual_velocity",
    "commutator",
    "commutator_values",
    "contraction_experiment",
    "dealias",
    "dealiased_product",
    "describe",
    "discrete_norms",
    "divergence",
    "equivalence_experiment",
    "error_metrics",
    "evaluate_offgrid",
    "fft_forward",
    "fft_inverse",
    "fit_rate",
    "holder_norm",
    "holder_seminorm",
    "ibp_residual",
    "integrate_flow",
    "integrate_gradient",
    "interp_values",
    "inviscid_limit_experiment",
    "invert_map",
    "kinetic_energy",
    "leray_project",
    "lemma_harness",
    "mc_scaling_experiment",
    "operator_norm",
    "parse_config",
    "picard_step",
    "random_displacement",
    "random_divergence_free",
    "random_scalar",
    "random_vector",
    "read_snapshot",
    "reconstruct_velocity",
    "reference_nse_solve",
    "resolve",
    "shear_exact",
    "shear_mode",
    "solve",
    "solve_diffusive",
    "solve_euler",
    "solve_windowed",
    "spectral_gradient",
    "taylor_green",
    "taylor_green_exact",
    "weber",
    "weber_lipschitz_probe",
    "write_snapshot",
]
