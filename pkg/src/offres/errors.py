"""Exception types raised across the package."""


class OffresError(Exception):
    """Base class for package errors."""

    code = "error"


class ValidationError(OffresError, ValueError):
    """Invalid parameters or inconsistent inputs."""

    code = "validation"


class SizeGuardError(OffresError, ValueError):
    """An oracle computation would exceed its configured cost limit."""

    code = "size_guard"


class FormatError(OffresError, ValueError):
    """Malformed or truncated file on disk."""

    code = "format"


class TrainingDivergence(OffresError, FloatingPointError):
    """Non-finite loss or gradient during training."""

    code = "divergence"
