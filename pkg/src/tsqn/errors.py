"""Exception hierarchy. Each family maps to a CLI exit code."""


class TSQNError(Exception):
    exit_code = 1
    code = "E_GENERIC"

    def __init__(self, message: str, *, code: str | None = None):
        super().__init__(message)
        if code is not None:
            self.code = code


class ConfigError(TSQNError, ValueError):
    exit_code = 2
    code = "E_CONFIG"


class DomainError(ConfigError):
    """Argument outside the mathematical domain of an operation."""

    code = "E_DOMAIN"


class ModeError(ConfigError):
    """Operation needs simulation truth that is not available."""

    code = "E_MODE"


class DataError(TSQNError, ValueError):
    exit_code = 3
    code = "E_DATA"


class NumericFailure(TSQNError, ArithmeticError):
    exit_code = 4
    code = "E_NUMERIC"

    def __init__(self, message: str, *, achieved: float | None = None, code: str | None = None):
        super().__init__(message, code=code)
        self.achieved = achieved


class RankDeficiencyError(NumericFailure):
    code = "E_RANK"

    def __init__(self, message: str, null_directions=None):
        super().__init__(message)
        self.null_directions = null_directions


class AssumptionViolation(TSQNError):
    exit_code = 5
    code = "E_ASSUMPTION"
