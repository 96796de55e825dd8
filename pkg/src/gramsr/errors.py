"""Exception types shared across the package."""


class GramSRError(Exception):
    """Base class for all package errors."""


class ShapeError(GramSRError, ValueError):
    """Operands have incompatible shapes."""


class SizeError(GramSRError, ValueError):
    """A dimension constraint (divisibility, minimum size) is violated."""


class FormatError(GramSRError, ValueError):
    """A file is not in a supported raster format."""


class ConfigurationError(GramSRError, ValueError):
    """An operation was requested in an invalid configuration or order."""


class CorruptionError(GramSRError, ValueError):
    """A checkpoint file failed manifest verification."""


class DataError(GramSRError, ValueError):
    """A dataset or corpus is empty or unusable."""


class DegenerateInputError(GramSRError, ValueError):
    """An input is degenerate (e.g. all-zero feature map) and has no defined result."""
