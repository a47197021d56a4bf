"""Exception types shared across the package."""


class DsinitError(Exception):
    """Base class for everything this package raises on purpose."""


class InvalidArgumentError(DsinitError, ValueError):
    """An argument violates a documented precondition."""


class ConfigError(InvalidArgumentError):
    """A run configuration file or CLI value cannot be used."""


class NumericalFailureError(DsinitError, ArithmeticError):
    """A numerical routine could not produce a valid result."""


class DegenerateDataError(DsinitError, ValueError):
    """The data carries no usable variation for the requested operation."""


class FormatError(DsinitError, ValueError):
    """A file does not match its binary or text format.

    ``offset`` is the byte position at which decoding gave up, when known.
    """

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class UnsupportedVersionError(FormatError):
    """A container version this build does not read."""
