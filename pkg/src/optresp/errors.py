"""Exception types shared by every stage of the pipeline."""


class OptRespError(Exception):
    """Base class for all package errors."""


class ConfigurationError(OptRespError, ValueError):
    """An input parameter violates a precondition.

    ``field`` names the offending parameter when one can be identified.
    """

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class NumericError(OptRespError, ArithmeticError):
    """A numerical stage failed (singular system, non-convergence, non-finite values)."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class AuditFailure(OptRespError):
    """A post-condition audit (mass, positivity, symmetry...) did not pass."""

    def __init__(self, message, audits=None):
        super().__init__(message)
        self.audits = list(audits or [])
