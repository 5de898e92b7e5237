"""Exception hierarchy shared by the solvers and the command line."""


class StickyMFGError(Exception):
    """Base class for all package errors."""


class NetworkError(StickyMFGError, ValueError):
    """Invalid network description (topology, parameters, H1 normalization)."""


class InconsistentTraceError(StickyMFGError, ValueError):
    """Weighted vertex traces of a density disagree beyond tolerance."""


class DomainError(StickyMFGError, ValueError):
    """A test function is not in the discrete generator domain."""


class NotAdmissibleError(StickyMFGError, ValueError):
    """Sub/super-solution candidates fail their residual sign checks."""


class SolverError(StickyMFGError, RuntimeError):
    """A numerical solver failed (singular system, non-convergence, bound violation)."""

    def __init__(self, message: str, residual: float | None = None, iteration: int | None = None):
        super().__init__(message)
        self.residual = residual
        self.iteration = iteration


class PositivityError(SolverError):
    """Density undershoot below the positivity tolerance."""


class ConfigError(StickyMFGError, ValueError):
    """Bad command-line or file configuration."""
