"""Exception hierarchy shared across the package."""


class DtamError(Exception):
    """Base class for package errors."""


class ShapeError(DtamError, ValueError):
    """Operands have incompatible shapes or sizes."""


class DomainError(DtamError, ValueError):
    """A value lies outside the mathematical domain of an operation."""


class DataError(DtamError):
    """Input data is malformed, missing, or degenerate."""


class NumericError(DtamError, ArithmeticError):
    """A computation produced a non-finite or otherwise invalid number."""


class CorruptionError(DataError):
    """A persisted artifact fails its integrity check."""
