"""Exception types shared across the package."""


class IVInferError(Exception):
    """Base class for errors raised by this package."""


class RankDeficiencyError(IVInferError):
    """A Gram matrix that must be (semi-)definite is rank deficient."""


class ConvergenceError(IVInferError):
    """An iterative routine failed to reach its tolerance."""

    def __init__(self, message, best=None, diagnostics=None):
        super().__init__(message)
        self.best = best
        self.diagnostics = diagnostics or {}


class ConfigError(IVInferError):
    """Invalid user-facing configuration (roles, column specs, flags)."""
