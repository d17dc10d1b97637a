"""Exception types shared across the package (and mapped to CLI exit codes)."""


class TensorDiError(Exception):
    """Base class for all package errors."""


class DimensionError(TensorDiError, ValueError):
    """Shape/mode mismatch between operands."""


class DataError(TensorDiError, ValueError):
    """Malformed or inconsistent input data (files, configs)."""


class NumericalError(TensorDiError, RuntimeError):
    """Numerical failure: singular systems, non-PSD variances, degenerate fits."""
