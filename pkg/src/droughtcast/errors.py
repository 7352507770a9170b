"""Exception types shared across the package."""


class DroughtcastError(Exception):
    """Base class for all errors raised by droughtcast."""


class PanelParseError(DroughtcastError, ValueError):
    """Malformed panel CSV (bad header, unparsable value, inconsistent RFE)."""


class PanelValidationError(DroughtcastError, ValueError):
    """A value in the panel is outside its physical range."""

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row


class PanelStructureError(DroughtcastError, ValueError):
    """Panel keys are missing, duplicated or not contiguous in time."""


class ConfigError(DroughtcastError, ValueError):
    pass


class ClimatologyError(DroughtcastError, ValueError):
    pass


class UsageError(DroughtcastError, ValueError):
    """An operation was called with inputs of the wrong kind."""


class FeatureError(DroughtcastError, ValueError):
    pass


class SingularDesignError(DroughtcastError, ArithmeticError):
    """The model matrix is rank deficient after constraints."""


class TrainingError(DroughtcastError, ArithmeticError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class StageError(DroughtcastError):
    """A pipeline stage could not produce its output."""

    def __init__(self, message, stage=None):
        super().__init__(message)
        self.stage = stage


class NoSurvivorsError(StageError):
    """The GAM screening stage selected no models."""
