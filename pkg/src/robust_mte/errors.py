"""Exception hierarchy shared by the library and the CLI."""


class MteError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(MteError, ValueError):
    """Bad configuration, CLI flags, or schema (CLI exit code 2)."""

    exit_code = 2


class DataError(MteError, ValueError):
    """Input data violates a precondition (CLI exit code 3)."""

    exit_code = 3


class OverlapError(DataError):
    """An instrument cell has no treated or no untreated units."""


class NumericalError(MteError, ArithmeticError):
    """A matrix that must be invertible is not (CLI exit code 4)."""

    exit_code = 4
