"""Exception hierarchy.

``DataError`` subclasses map to CLI exit code 3 and ``NumericalError``
subclasses to exit code 4.
"""


class PoseKitError(Exception):
    """Base class for all toolkit errors."""


class DataError(PoseKitError):
    """Bad or inconsistent input data."""


class NumericalError(PoseKitError):
    """A computation could not produce a valid result."""


class PointBehindCamera(NumericalError):
    pass


class InvalidFov(DataError, ValueError):
    pass


class DegenerateGeometry(NumericalError):
    pass


class NoValidSolution(NumericalError):
    pass


class UndefinedWeighting(NumericalError, ValueError):
    pass


class BadStride(DataError, ValueError):
    pass


class ShapeMismatch(DataError, ValueError):
    pass


class BoxOutsideImage(DataError, ValueError):
    pass


class BadResolution(DataError, ValueError):
    pass


class ModelTooSmall(DataError):
    pass


class ZeroTruthTranslation(DataError, ValueError):
    pass


class EmptyInput(DataError, ValueError):
    pass


class DatasetIOError(DataError, OSError):
    pass


class SchemaVersionMismatch(DataError):
    pass


class IdMismatch(DataError, KeyError):
    def __str__(self):
        return Exception.__str__(self)
