"""Exception hierarchy shared across the package."""


class HardyTestError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(HardyTestError, ValueError):
    """An argument is outside the mathematically valid domain."""


class ValidationError(HardyTestError, ValueError):
    """A constructed object violates its invariants."""


class InsufficientDataError(HardyTestError, ValueError):
    """The data set is too sparse for the requested estimate."""


class DataFormatError(HardyTestError, ValueError):
    """A record or counts file is malformed.

    ``line_number`` is 1-based and refers to the physical line in the
    offending file (0 when the location is unknown).
    """

    def __init__(self, message: str, line_number: int = 0):
        super().__init__(message)
        self.line_number = line_number


class ConvergenceError(HardyTestError, RuntimeError):
    """An iterative solver failed to reach its stated tolerance.

    Carries the best iterate found so far in ``best_result`` so callers
    can inspect or salvage it.
    """

    def __init__(self, message: str, best_result=None, diagnostics: dict | None = None):
        super().__init__(message)
        self.best_result = best_result
        self.diagnostics = diagnostics or {}
