"""Exception types raised across the package."""


class RelentError(Exception):
    """Base class for all errors raised by relent_lab."""


class DomainError(RelentError, ValueError):
    """A state left the admissible region of a system (e.g. rho <= rho_min)."""

    def __init__(self, message, component=None, index=None):
        super().__init__(message)
        self.component = component
        self.index = index


class InversionError(RelentError):
    """Newton inversion of V = A(U, x, t) did not converge."""

    def __init__(self, message, last_iterate=None, residual=None, index=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual = residual
        self.index = index


class QuadratureError(RelentError):
    pass


class HistoryGapError(RelentError):
    pass


class ConvexityViolationError(RelentError):
    """Relative entropy is non-positive at U != Ubar (hypothesis H3 fails)."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class AuditCoverageError(RelentError):
    pass


class InsufficientDataError(RelentError):
    pass


class LedgerError(RelentError):
    pass


class StepError(RelentError):
    """A time step failed; carries the time and offending cell when known."""

    def __init__(self, message, t=None, index=None):
        super().__init__(message)
        self.t = t
        self.index = index


class ConfigError(RelentError):
    """Invalid run configuration; ``path`` is the JSON path of the bad key."""

    def __init__(self, message, path=""):
        super().__init__(f"{path or '.'}: {message}")
        self.path = path
