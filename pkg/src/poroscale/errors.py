"""Exception types shared across the package."""


class PoroscaleError(Exception):
    """Base class for all package errors."""


class ParameterError(PoroscaleError):
    """Invalid user-supplied parameter or field (wrong sign, shape, range)."""


class NumericError(PoroscaleError):
    """A numerical procedure failed (solver non-convergence, eigensolver failure).

    Carries the achieved residual when a linear solve is the culprit.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class FormatError(PoroscaleError):
    """Corrupt or incompatible on-disk data (bad magic, version, truncation)."""


class PipelineError(PoroscaleError):
    """A pipeline stage cannot run, typically because an upstream stage
    has not produced its artifacts yet. The message names the command to
    run first."""
