"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes: usage problems exit 1, malformed
input data exits 2 and numerical failures exit 3.
"""


class ZAEError(Exception):
    """Base class for package errors."""


class DimensionError(ZAEError, ValueError):
    """Array shapes do not agree with what an operation expects."""


class DataFormatError(ZAEError):
    """A file or record could not be parsed."""


class NumericalError(ZAEError, ArithmeticError):
    """A computation produced a non-finite value or a singular system."""
