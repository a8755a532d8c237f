"""Exception hierarchy shared by every module."""


class SargnnError(Exception):
    """Base class for all library errors."""


class InvalidInputError(SargnnError, ValueError):
    """Raised when an argument violates a documented precondition."""


class IngestionError(InvalidInputError):
    """Raised when raw image data contains non-finite values."""

    def __init__(self, coord, message="non-finite value"):
        self.coord = tuple(int(c) for c in coord)
        super().__init__(f"{message} at pixel {self.coord}")


class ShapeError(SargnnError, ValueError):
    """Raised on array shape or width mismatches between layers."""


class ConfigError(SargnnError, ValueError):
    """Raised for inconsistent model, training or run configuration."""


class FormatError(SargnnError):
    """Raised when a binary sample or checkpoint cannot be parsed."""

    def __init__(self, offset, cause):
        self.offset = int(offset)
        self.cause = cause
        super().__init__(f"format error at offset {self.offset}: {cause}")


class DatasetError(SargnnError):
    """Raised for manifest problems (missing files, bad labels, dims)."""


class EmptyHistogramError(SargnnError, ValueError):
    pass


class TapeError(SargnnError, RuntimeError):
    """Raised when backward is called with a tape that no longer matches."""


class DivergenceError(SargnnError, FloatingPointError):
    """Raised when training produces a non-finite gradient."""
