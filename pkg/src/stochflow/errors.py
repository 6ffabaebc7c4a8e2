"""Exception types shared across the solvers and the CLI."""

__all__ = [
    "StochflowError",
    "ConfigError",
    "NotInvertible",
    "NoConvergence",
    "RemapRequired",
    "BallExit",
    "SingularMatrix",
    "CFLViolation",
]


class StochflowError(Exception):
    """Base class for all package errors."""


class ConfigError(StochflowError):
    """Malformed or out-of-range run configuration (CLI exit code 3)."""


class NotInvertible(StochflowError):
    """Displacement map rejected: gradient certificate exceeds the cap."""

    def __init__(self, sup_grad, cap, msg=None, time=None):
        self.sup_grad = float(sup_grad)
        self.cap = float(cap)
        self.time = None if time is None else float(time)
        at = "" if self.time is None else f" at t = {self.time:.6g}"
        super().__init__(
            msg or f"map not certified invertible{at}: sup |grad lambda| = "
            f"{self.sup_grad:.6g} > {self.cap:.3g}"
        )


class NoConvergence(StochflowError):
    """An iteration hit its cap before reaching tolerance (CLI exit code 2)."""

    def __init__(self, what, iterations, residual, tol):
        self.what = what
        self.iterations = int(iterations)
        self.residual = float(residual)
        self.tol = float(tol)
        super().__init__(
            f"{what}: no convergence after {iterations} iterations "
            f"(residual {self.residual:.6g}, tol {self.tol:.6g})"
        )


class RemapRequired(StochflowError):
    """Lagrangian displacement gradient left the trust region.

    Carries the first time ``t_star`` at which ``sup |grad ell|`` exceeded
    the remap threshold; the caller may restart the solve from ``u(t_star)``
    as fresh initial data.
    """

    def __init__(self, t_star, sup_grad, threshold):
        self.t_star = float(t_star)
        self.sup_grad = float(sup_grad)
        self.threshold = float(threshold)
        super().__init__(
            f"displacement gradient {self.sup_grad:.4g} exceeded "
            f"{self.threshold:.3g} at t = {self.t_star:.6g}; restart from "
            f"u(t_star) with a shorter window"
        )


class BallExit(StochflowError):
    """Displacement evolution left the small-gradient ball mid-window."""

    def __init__(self, t_star, sup_grad, threshold):
        self.t_star = float(t_star)
        self.sup_grad = float(sup_grad)
        self.threshold = float(threshold)
        super().__init__(
            f"sup |grad ell| = {self.sup_grad:.4g} at t = {self.t_star:.6g} "
            f"exceeds window threshold {self.threshold:.3g}"
        )


class SingularMatrix(StochflowError):
    """A per-node matrix inversion met a (near-)singular Jacobian."""


class CFLViolation(StochflowError):
    """Advective CFL number exceeded the stability cap."""

    def __init__(self, cfl, cap):
        self.cfl = float(cfl)
        self.cap = float(cap)
        super().__init__(
            f"CFL number {self.cfl:.4g} exceeds cap {self.cap:.3g}; "
            f"reduce dt or refine in time"
        )
