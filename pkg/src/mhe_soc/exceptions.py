"""Exception types raised across the package."""


class MheSocError(Exception):
    """Base class for all package errors."""


class NonFiniteState(MheSocError, ArithmeticError):
    pass


class LengthMismatch(MheSocError, ValueError):
    pass


class NonMonotonicTime(MheSocError, ValueError):
    pass


class InsufficientHistory(MheSocError, ValueError):
    pass


class UnstablePole(MheSocError, ValueError):
    pass


class NonFiniteObjective(MheSocError, ArithmeticError):
    pass


class EmptyRange(MheSocError, ValueError):
    pass


class ConfigError(MheSocError, ValueError):
    """Configuration failed schema validation or references missing files."""
