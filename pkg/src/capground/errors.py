"""Exception types shared across the package."""


class CapgroundError(Exception):
    """Base class for all package-specific errors."""


class InvalidArgument(CapgroundError, ValueError):
    """A scalar/vector argument violates a precondition."""


class DegenerateVector(CapgroundError, ValueError):
    """Cosine similarity requested for a (near-)zero-norm vector."""


class InvalidRect(CapgroundError, ValueError):
    """Rectangle is empty or out of bounds."""


class ShapeError(CapgroundError, ValueError):
    """Array shapes are mutually inconsistent."""


class UnknownWord(CapgroundError, KeyError):
    """Word or word index not present in the vocabulary."""


class InvalidBatch(CapgroundError, ValueError):
    """Training batch too small or malformed."""


class NumericalError(CapgroundError, ArithmeticError):
    """A non-finite value appeared where finiteness is required."""


class SpecError(CapgroundError, ValueError):
    """A synthetic-scene specification cannot be satisfied."""
