class AffordmapError(Exception):
    """Base class for all package errors."""


class DimensionError(AffordmapError, ValueError):
    pass


class ParameterError(AffordmapError, ValueError):
    pass


class SupervisionError(AffordmapError, ValueError):
    pass


class TrainingError(AffordmapError, RuntimeError):
    pass


class FormatError(AffordmapError, ValueError):
    pass


class ValidationError(AffordmapError, ValueError):
    """Bad input data; the message names the offending record or byte offset."""


class NumericalError(AffordmapError, ValueError):
    """Non-finite values where finite ones are required."""
