"""Exception types shared across the package."""


class RxncondError(Exception):
    """Base class for all package errors."""


class DimensionError(RxncondError, ValueError):
    """Tensor shapes are incompatible for the requested operation."""


class ValidationError(RxncondError, ValueError):
    """An input value violates a documented precondition."""


class ParseError(RxncondError, ValueError):
    """A SMILES string could not be parsed.

    ``offset`` is the byte offset of the offending token in the input.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset


class TrainingError(RxncondError, RuntimeError):
    """Training aborted (non-finite gradient or loss)."""


class ConfigError(RxncondError, RuntimeError):
    """Configuration is inconsistent (bad key, digest mismatch, ...)."""


class UsageError(RxncondError, RuntimeError):
    """An API was called in an unsupported way."""
