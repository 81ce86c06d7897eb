"""Exception classes raised by tensordeli."""


class DeliError(Exception):
    """Base class for all library errors."""


class ShapeError(DeliError, ValueError):
    """Operands have incompatible shapes or column counts."""


class RankError(DeliError, ValueError):
    """A matrix does not have the rank an operation requires."""


class CapacityError(DeliError, MemoryError):
    """A dense result would exceed the configured entry budget."""


class UndefinedCoherenceError(DeliError, ValueError):
    """Coherence was requested for the zero matrix."""


class RankOverflowError(DeliError, RuntimeError):
    """Adaptive completion needed more than ``r`` basis columns."""


class DegenerateSlicesError(DeliError, ValueError):
    """The slice stack handed to Jennrich's algorithm cannot be diagonalized."""


class PairingError(DeliError, ValueError):
    """Eigenvalues of the two Jennrich pencils could not be matched."""

    def __init__(self, message, indices=()):
        super().__init__(message)
        self.indices = tuple(indices)


class ConditioningError(DeliError, ValueError):
    """Eigenvalues came out complex beyond the tolerated imaginary part."""


class OverRankError(DeliError, ValueError):
    """More mutually distinct components were found than the target rank."""


class ParseError(DeliError, ValueError):
    """A tensor, factor, or sample file could not be parsed."""

    def __init__(self, message, line=None, offset=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"offset {offset}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)
        self.line = line
        self.offset = offset
