"""Exception types raised across the package."""


class ConfigError(ValueError):
    """Invalid parameters or inconsistent dimensions."""


class FactorizationError(ValueError):
    """A KKT matrix could not be factorized (singular or rank deficient)."""

    def __init__(self, message, rank=None, size=None):
        super().__init__(message)
        self.rank = rank
        self.size = size

    @property
    def defect(self):
        if self.rank is None or self.size is None:
            return None
        return self.size - self.rank


class NumericalFailure(ArithmeticError):
    """A non-finite value appeared during the iteration."""

    def __init__(self, message, iteration):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration


class ConvergenceError(RuntimeError):
    """An inner iterative routine hit its iteration cap."""


class ProblemFormatError(ValueError):
    """A problem or trace file does not match the schema.

    ``field`` holds the dotted path of the offending entry.
    """

    def __init__(self, message, field=None):
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)
        self.field = field
