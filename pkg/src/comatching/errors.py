"""Exception types shared across the package."""


class ComatchingError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(ComatchingError):
    """Operands have incompatible shapes; the message names both shapes."""


class FullyMaskedError(ComatchingError):
    """A softmax column (or attention row set) has no unmasked entry."""


class EmptyPoolError(ComatchingError):
    """Max pooling was asked to reduce over zero columns."""


class EmptySequenceError(ComatchingError):
    """A recurrent encoder received a zero-length sequence."""


class ConfigError(ComatchingError):
    """Invalid or inconsistent configuration values."""


class DataError(ComatchingError):
    """Malformed input data; the message carries the file name or example id."""


class EmbeddingFormatError(DataError):
    """Bad line in an embedding file; the message carries the line number."""


class CheckpointError(ComatchingError):
    """Corrupt or incompatible checkpoint; the message carries the byte offset."""


class NumericError(ComatchingError):
    """A non-finite value surfaced where the training contract forbids it."""
