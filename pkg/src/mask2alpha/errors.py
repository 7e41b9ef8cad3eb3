"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand dimensions do not satisfy an operation's contract."""


class InvalidValueError(ValueError):
    """A NaN or infinite value was produced or supplied."""


class DomainError(ValueError):
    """An argument lies outside the accepted range."""


class FormatError(ValueError):
    """Malformed file contents.

    ``offset`` is the byte position at which parsing failed, when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte {offset})"
        super().__init__(message)
        self.offset = offset


class ChecksumError(FormatError):
    """Stored CRC does not match the recomputed one."""
