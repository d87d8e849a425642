"""Exception types shared across the package."""


class DialectFP4Error(Exception):
    """Base class for all package errors."""


class InputError(DialectFP4Error, ValueError):
    """Invalid user input: non-finite data, bad dimensions, malformed files."""


class FormatbookError(InputError):
    """A formatbook document failed to parse or validate."""


class VerificationError(DialectFP4Error):
    """A bit-exactness assertion failed (gemm-check)."""
