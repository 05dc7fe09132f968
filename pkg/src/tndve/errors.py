"""Exception hierarchy.

Every error raised by the package derives from :class:`TNDError`. The CLI maps
each family below onto its own exit code.
"""


class TNDError(Exception):
    """Base class for all package errors."""


class ConfigError(TNDError):
    """Invalid scenario or run configuration."""


class InvalidScenarioError(ConfigError):
    """Scenario parameters produce an impossible data-generating process."""


class IoError(TNDError):
    """Reading or writing a file failed at the operating-system level."""


class DataError(TNDError):
    """Problems with input data (files, strata, arms)."""


class ParseError(DataError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SchemaError(DataError):
    pass


class EmptyStratumError(DataError):
    pass


class OneArmOnlyError(DataError):
    pass


class LengthMismatchError(DataError):
    pass


class WeightMismatchError(DataError):
    pass


class NumericError(TNDError):
    """Numerical failure during estimation."""


class NonConvergenceError(NumericError):
    pass


class SeparationError(NumericError):
    pass


class RankDeficientError(NumericError):
    pass


class SingularInformationError(NumericError):
    pass


class EmptyCellError(NumericError):
    """A kernel-weighted sum required by the ratio estimator is zero."""


class TooFewObservationsError(NumericError):
    pass


class NonPositiveWeightError(NumericError):
    pass


class ZeroSeError(NumericError):
    pass


class ZeroVarianceError(NumericError):
    pass


class DomainError(NumericError):
    pass


class AllReplicatesFailedError(NumericError):
    pass


class DataWarning(UserWarning):
    """Input data was accepted but something looked off (unknown tokens, ranges)."""
