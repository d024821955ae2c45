"""Exception hierarchy. Each family maps to one CLI exit code."""


class ModelSwitchError(Exception):
    exit_code = 1


class ConfigError(ModelSwitchError, ValueError):
    exit_code = 2


class DataError(ModelSwitchError, ValueError):
    exit_code = 3


class InputDomainError(DataError):
    """Non-finite or out-of-domain numeric input."""


class DegeneratePortfolioError(DataError):
    """Drifted holdings cannot be renormalised (normaliser <= 0)."""


class BankruptcyError(DataError):
    """Log utility evaluated at a net return <= -1."""


class NumericalError(ModelSwitchError, ArithmeticError):
    exit_code = 4


class IllConditionedError(NumericalError):
    def __init__(self, message, rank=None):
        super().__init__(message)
        self.rank = rank
