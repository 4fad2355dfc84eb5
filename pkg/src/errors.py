"""
Exception hierarchy shared by every module.

Each class also derives from the builtin exception a caller would naturally
catch (ValueError, IOError, ...), so `except ValueError` keeps working.
"""


class RQGNNError(Exception):
    """Base class for all errors raised by this package."""


class DataError(RQGNNError, ValueError):
    """Input data is malformed or unusable."""


class DatasetLoadError(DataError, IOError):
    """A dataset file could not be found or opened."""

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path


class DatasetParseError(DataError):
    """A dataset file contains an invalid line."""

    def __init__(self, message, path=None, line_number=None):
        if path is not None and line_number is not None:
            message = f"{path}:{line_number}: {message}"
        super().__init__(message)
        self.path = path
        self.line_number = line_number


class SplitError(DataError):
    """A dataset cannot be split as requested."""


class ConfigError(RQGNNError, ValueError):
    """A hyperparameter, kernel id or flag value is invalid."""


class ShapeError(RQGNNError, ValueError):
    """Array dimensions do not match."""


class ContractError(RQGNNError, RuntimeError):
    """An API was used outside its contract."""


class NumericalError(RQGNNError, ArithmeticError):
    """A computation produced non-finite values or failed to converge."""


class OracleCapacityError(NumericalError):
    """The dense eigendecomposition oracle was asked for a matrix above its cap."""


class TrainingDivergedError(NumericalError):
    """Training loss became non-finite.

    Attributes:
        checkpoint: parameters from the last epoch that finished with a finite loss
        epoch (int): epoch in which divergence was detected
    """

    def __init__(self, message, checkpoint=None, epoch=None):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.epoch = epoch
