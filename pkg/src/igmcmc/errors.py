"""Exception hierarchy shared across the package."""


class IGMCMCError(Exception):
    """Base class for all package errors."""


class InputError(IGMCMCError, ValueError):
    """Bad shapes, out-of-range parameters or points off a required set."""


class NumericalError(IGMCMCError, ArithmeticError):
    """Non-finite values or a numerical routine that failed to converge."""


class DegenerateIntersectionError(NumericalError):
    """A restricted Jacobian or tangent space lost rank (tangency)."""


class DegenerateEigenvalueError(NumericalError):
    """Eigenvalue gap below the degeneracy tolerance."""


class EstimationError(NumericalError):
    """A Monte Carlo estimate could not be formed (e.g. zero hits)."""


class ConfigError(IGMCMCError, ValueError):
    """Malformed or unknown experiment configuration."""


class StallError(IGMCMCError):
    """Run flagged invalid because too many iterations stalled."""
