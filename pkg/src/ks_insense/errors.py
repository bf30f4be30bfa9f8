"""Exception types shared across the package."""


class KsInsenseError(Exception):
    """Base class for all package errors."""


class ConfigError(KsInsenseError, ValueError):
    pass


class BadInterval(ConfigError):
    pass


class DegenerateParams(ConfigError):
    pass


class SingularMatrix(KsInsenseError, ArithmeticError):
    pass


class SearchFailed(KsInsenseError):
    pass


class CgStalled(KsInsenseError):
    """Raised when CG misses its tolerance; ``result`` holds the best iterate."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class DegenerateObservation(KsInsenseError, ArithmeticError):
    pass


class EigFailed(KsInsenseError):
    pass
