"""Exception hierarchy.

Every error raised by the package derives from :class:`DefregError`. The
CLI maps :class:`UsageError` subclasses to exit code 2 and everything else
to exit code 1.
"""


class DefregError(Exception):
    """Base class for all package errors."""


class UsageError(DefregError):
    """Bad flags or configuration (CLI exit code 2)."""


# grid / transform / losses
class DimsMismatch(DefregError, ValueError):
    pass


class EvenWindow(DefregError, ValueError):
    pass


class RangeViolation(DefregError, ValueError):
    pass


class MissingLabels(DefregError, ValueError):
    pass


class ShapeMismatch(DefregError, ValueError):
    pass


# optim
class ConfigInvalid(UsageError, ValueError):
    pass


class LandmarkOutOfBounds(DefregError, ValueError):
    pass


class CountMismatch(DefregError, ValueError):
    pass


# data
class LayoutMismatch(DefregError):
    pass


class GroupTooSmall(DefregError):
    pass


class Empty(DefregError):
    pass


class BadSpec(UsageError, ValueError):
    pass


# io
class BadMagic(DefregError):
    pass


class UnsupportedDatatype(DefregError):
    pass


class Truncated(DefregError):
    pass


class NonPositivePixdim(DefregError):
    pass


class IoFailure(DefregError, OSError):
    pass


class ParseError(DefregError, ValueError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class JsonInvalid(ConfigInvalid):
    pass


class UnknownKey(ConfigInvalid):
    pass


class DomainError(ConfigInvalid):
    pass


# synth
class SpecInvalid(UsageError, ValueError):
    pass
