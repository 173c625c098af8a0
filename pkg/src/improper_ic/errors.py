"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid user-supplied configuration (labels, ranges, file contents)."""


class SolverError(RuntimeError):
    """An inner convex solve failed to converge.

    Carries the last iterate and the residuals at that point so callers can
    decide whether to fall back.
    """

    def __init__(self, message, x=None, residuals=None):
        super().__init__(message)
        self.x = x
        self.residuals = residuals or {}
