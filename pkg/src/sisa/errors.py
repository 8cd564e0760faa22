"""Exception hierarchy shared by every module."""


class SisaError(Exception):
    """Base class for all errors raised by this package."""


class DataFormatError(SisaError, ValueError):
    """Malformed dataset input (bad CSV, duplicate ids, empty file)."""


class NotFoundError(SisaError, KeyError):
    """A point id is not present in the partition plan."""

    def __str__(self):
        # KeyError.__str__ wraps the message in quotes
        return str(self.args[0]) if self.args else ""


class NumericalError(SisaError, ArithmeticError):
    """Training produced a non-finite loss."""


class IntegrityError(SisaError):
    """A checkpoint file failed its magic, length, or CRC check."""


class VersionError(SisaError):
    """A checkpoint file was written with an unsupported format version."""
