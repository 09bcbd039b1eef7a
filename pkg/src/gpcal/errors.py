"""Exception types shared across the package.

Numerical failures (ill-conditioned systems, diverging solvers) derive from
:class:`NumericsError` so callers can separate them from configuration and
input mistakes, which use plain ``ValueError`` subclasses.
"""


class NumericsError(RuntimeError):
    """A numerical procedure failed (factorization, solver divergence, ...)."""


class IllConditionedKernelError(NumericsError):
    """Cholesky factorization failed even after maximum jitter escalation."""


class DegenerateGeometryError(NumericsError):
    """Geometric configuration does not determine a unique solution."""


class UndistortionError(NumericsError):
    """Newton undistortion failed to converge."""


class TrainingDivergedError(NumericsError):
    """Iterative training produced a non-finite loss."""

    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch


class InsufficientDataError(ValueError):
    """Too few samples for the requested operation."""


class VisibilityError(ValueError):
    """One or more points are not visible in every camera."""

    def __init__(self, message: str, violations: list | None = None):
        super().__init__(message)
        # list of (point_index, camera_index, status_name) triples
        self.violations = violations or []
