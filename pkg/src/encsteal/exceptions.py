"""Exception hierarchy shared across the package."""


class EncStealError(Exception):
    """Base class for all package errors."""


class ConfigurationError(EncStealError, ValueError):
    """Invalid architecture, policy, hyperparameter or experiment setting."""


class DimensionError(EncStealError, ValueError):
    """Array shapes do not satisfy an operation's contract."""


class DegenerateInputError(EncStealError, ValueError):
    """Input for which the quantity is undefined, e.g. a zero-norm vector."""


class NumericError(EncStealError, ArithmeticError):
    """A NaN or infinity appeared where finite values are required."""


class DataError(EncStealError, ValueError):
    """Labels or samples violate a dataset contract."""


class FormatError(EncStealError, ValueError):
    """A file does not follow the expected binary or text layout."""


class BudgetExhaustedError(EncStealError, RuntimeError):
    """The oracle refused a query because the query budget would be exceeded."""

    def __init__(self, requested, used, budget):
        self.requested = requested
        self.used = used
        self.budget = budget
        super().__init__(
            f"query budget exhausted: {used} used + {requested} requested > {budget}"
        )


class ExperimentError(EncStealError, RuntimeError):
    """A pipeline phase failed; ``phase`` names which one."""

    def __init__(self, phase, cause):
        self.phase = phase
        self.cause = cause
        super().__init__(f"[{phase}] {type(cause).__name__}: {cause}")
