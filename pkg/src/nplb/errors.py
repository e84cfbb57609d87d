"""Exception hierarchy shared across the package."""


class NPLBError(Exception):
    """Base class for all package errors."""


class DimensionError(NPLBError, ValueError):
    pass


class EmptyInputError(NPLBError, ValueError):
    pass


class RangeError(NPLBError, ValueError):
    pass


class FactorizationError(NPLBError, ValueError):
    """Raised when a covariance matrix is not symmetric positive-definite."""


class UndefinedCorrelationError(NPLBError, ValueError):
    pass


class ConfigurationError(NPLBError, ValueError):
    pass


class TraceError(NPLBError, ValueError):
    """A forward trace does not belong to the parameters passed to backward."""


class SamplingError(NPLBError, ValueError):
    pass


class DivergenceError(NPLBError, ArithmeticError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class DataError(NPLBError, ValueError):
    """Malformed or inconsistent cohort / bounds / checkpoint data."""


class IncompleteRecordError(DataError):
    pass


class InfeasibleBoundsError(DataError):
    def __init__(self, message, feature=None):
        super().__init__(message)
        self.feature = feature


class GenerationTimeoutError(DataError):
    pass


class EmptyResultError(DataError):
    pass
