"""Exception hierarchy shared by the library and the CLI."""


class Nof1Error(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(Nof1Error, ValueError):
    """An argument violates a documented precondition."""


class ConfigError(InvalidArgumentError):
    """A configuration document is malformed; ``field`` names the culprit."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message if field is None else f"{field}: {message}")
        self.field = field


class DataError(Nof1Error, ValueError):
    """Input data is malformed (missing columns, bad values)."""


class DegenerateInstrumentError(Nof1Error):
    """The sample covariance between instrument and treatment is exactly zero."""


class CannotInvertError(DegenerateInstrumentError):
    """Confidence intervals are undefined because the compliance constant K is zero."""


class UndefinedEstimatorError(Nof1Error):
    """An estimator needs both groups of a binary variable and one is empty."""


class DegenerateRegressionError(Nof1Error):
    """A regressor is constant, so the residualizing regression is not identified."""


class EmptyIntervalError(Nof1Error):
    """No grid point of a p-value profile exceeds the requested level."""
