"""Exception types shared across the package."""


class PuzzleCAMError(Exception):
    """Base class for all package errors."""


class ContractError(PuzzleCAMError, ValueError):
    """An argument violates a documented precondition (shape, range, flag)."""


class DatasetError(PuzzleCAMError, ValueError):
    """Dataset layout, label file, or image problem; message carries the item id."""


class PCAMFormatError(PuzzleCAMError, ValueError):
    """Malformed PCAM file; message carries the byte offset of the problem."""


class CheckpointError(PuzzleCAMError, ValueError):
    """Malformed or incompatible checkpoint file."""


class DivergenceError(PuzzleCAMError, RuntimeError):
    """Training loss became non-finite or exceeded the divergence limit."""


class ConfigError(PuzzleCAMError, ValueError):
    """Bad run-config file or --set override (unknown key, unparsable value)."""
