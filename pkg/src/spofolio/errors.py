"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`SpofolioError`
and carries an ``exit_code`` the command-line front end maps to its status.
"""


class SpofolioError(Exception):
    exit_code = 1


class ConfigError(SpofolioError, ValueError):
    exit_code = 1

    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}")


class DataError(SpofolioError, ValueError):
    exit_code = 2


class ParseError(DataError):
    def __init__(self, path, line, message):
        self.path = path
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


class AlignmentError(DataError):
    pass


class HistoryError(DataError):
    def __init__(self, message, shortfall=None):
        self.shortfall = shortfall
        super().__init__(message)


class ScheduleError(DataError):
    pass


class WindowError(DataError):
    pass


class ShapeError(SpofolioError, ValueError):
    exit_code = 3


class NumericalError(SpofolioError, ArithmeticError):
    exit_code = 3


class InputError(NumericalError, ValueError):
    """Optimizer input violates the problem invariants."""


class SolverError(NumericalError):
    pass


class SharpeUndefinedError(NumericalError):
    pass


class StageError(SpofolioError):
    """A backtest stage failed; wraps the cause with the decision date."""

    def __init__(self, date, cause):
        self.date = date
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 3)
        super().__init__(f"decision {date}: {cause}")
