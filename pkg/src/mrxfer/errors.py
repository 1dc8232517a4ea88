"""Exception types shared across the toolkit."""


class MrxferError(Exception):
    """Base class for all toolkit errors."""


class InvalidArgumentError(MrxferError, ValueError):
    """An argument violates a documented precondition."""


class ConstraintError(MrxferError, ValueError):
    """A requested configuration is infeasible (e.g. unreachable sampling fraction)."""


class NumericalError(MrxferError, ArithmeticError):
    """A numerical failure (NaN/Inf or a singular system) was detected."""


class FormatError(MrxferError):
    """Base class for tensor-container format errors; carries a short error code."""

    code = "format"


class BadMagicError(FormatError):
    code = "bad_magic"


class TruncatedPayloadError(FormatError):
    code = "truncated"


class DtypeMismatchError(FormatError):
    code = "dtype_mismatch"


class BadHeaderError(FormatError):
    code = "bad_header"
