"""Exception hierarchy shared by every subpackage."""


class LocvalidError(Exception):
    """Base class for errors raised by locvalid."""


class DimensionError(LocvalidError, ValueError):
    """Raised when tensor or mask shapes disagree.

    Attributes:
        axis: Name or index of the offending axis, when known.
    """

    def __init__(self, message, axis=None):
        super().__init__(message)
        self.axis = axis


class FusionError(DimensionError):
    """Raised when per-plane outputs cannot be fused."""


class NumericError(LocvalidError, ArithmeticError):
    """Raised on non-finite input or an invalid normaliser."""


class GraphError(LocvalidError):
    """Raised when the computation graph is malformed (e.g. cyclic)."""


class EmptyInputError(LocvalidError, ValueError):
    """Raised when an operation receives an empty collection."""


class EmptyStackError(EmptyInputError):
    """Raised when a slice stack has no slices."""


class UndefinedMetricError(LocvalidError, ValueError):
    """Raised when a metric has no meaning for the given masks."""


class AnnotationError(LocvalidError, ValueError):
    """Raised for malformed or out-of-bounds annotations."""


class DegenerateFitError(LocvalidError, ValueError):
    """Raised when a fit is impossible, e.g. only one class in the labels."""


class TrainingError(LocvalidError, ValueError):
    """Raised when a training run cannot start."""


class GridFormatError(LocvalidError, ValueError):
    """Raised when a grid file is malformed.

    Attributes:
        offset: Byte offset at which decoding failed.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
