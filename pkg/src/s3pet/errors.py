"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid configuration or precondition violation."""


class FormatError(ValueError):
    """Malformed on-disk file (volume, checkpoint, manifest)."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericError(ArithmeticError):
    """Non-finite value produced inside a forward pass."""


class ShapeError(ValueError):
    """Array shapes do not agree."""
