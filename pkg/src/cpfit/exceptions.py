"""Exception types shared across the package."""


class DataError(ValueError):
    """Raised when input data (files, tensors, loss domains) is invalid."""


class NumericalError(RuntimeError):
    """Raised on numerical failure: singular systems, divergence, non-finite values."""
