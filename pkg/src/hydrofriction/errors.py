"""Exception hierarchy shared by every module.

The CLI maps ``DataError`` subclasses to exit code 2 and ``NumericFailure``
to exit code 3.
"""


class HydroFrictionError(Exception):
    """Base class for toolkit errors."""


class InvalidArgument(HydroFrictionError, ValueError):
    pass


class DataError(HydroFrictionError):
    """Input data does not satisfy a module contract."""


class InsufficientData(DataError):
    pass


class DegenerateFeature(DataError):
    def __init__(self, column):
        super().__init__(f"feature column {column!r} has zero variance")
        self.column = column


class EmptyDataset(DataError):
    pass


class OrderingError(DataError):
    pass


class RateError(DataError):
    pass


class UndefinedBase(DataError):
    pass


class OutOfRange(DataError):
    pass


class IdentificationError(DataError):
    pass


class UnsupportedVersion(DataError):
    pass


class NumericFailure(HydroFrictionError, ArithmeticError):
    pass
