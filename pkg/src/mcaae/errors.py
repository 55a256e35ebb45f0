"""Exception taxonomy shared across the package."""


class McaaeError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(McaaeError, ValueError):
    """An argument violates a documented precondition."""


class DimensionError(ValidationError):
    """Array shapes do not line up with the declared structure."""


class FormatError(McaaeError, ValueError):
    """A binary or text file does not match its format contract.

    ``offset`` is the byte offset at which the problem was detected,
    when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TrainingError(McaaeError, RuntimeError):
    """Optimization produced non-finite values or otherwise diverged."""
