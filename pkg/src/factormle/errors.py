"""Exception types raised by the factor-model estimators."""


class FactorModelError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(FactorModelError):
    """Input data or parameters violate a documented precondition."""


class IllConditionedError(FactorModelError):
    """A small symmetric system is numerically singular.

    Carries an estimate of the condition number of the offending matrix;
    callers are expected to fail loudly rather than regularize.
    """

    def __init__(self, message, condition=None):
        if condition is not None:
            message = f"{message} (condition estimate {condition:.3e})"
        super().__init__(message)
        self.condition = condition


class RankError(FactorModelError):
    """A matrix has lower rank than the operation requires."""


class FirstRowsUnsuitableError(FactorModelError):
    """The leading r x r loading block cannot anchor the identification.

    Reorder the variables so the first r rows form a well-conditioned,
    invertible block before requesting IC1, IC4 or IC5.
    """


class NonIdentifiedOrderingError(FactorModelError):
    """Tied diagonal values admit no unique descending order."""


class UnsupportedICError(FactorModelError):
    """The requested quantity has no implemented closed form under this tag."""


class InvalidKurtosisError(FactorModelError):
    """Excess kurtosis below -2 is impossible for a real random variable."""


class HarnessError(FactorModelError):
    """Too many replications failed for a simulation summary to be trusted."""
