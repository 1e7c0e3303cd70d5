"""Exception hierarchy.

Each class carries the CLI exit code it maps to, so the command-line front
end can translate failures without a lookup table.
"""


class BiclustError(Exception):
    exit_code = 1


class DomainError(BiclustError, ValueError):
    """Argument outside the domain of a special function or density."""

    exit_code = 3


class DataError(BiclustError, ValueError):
    """Malformed or invalid input data (bad categories, ragged rows, ...)."""

    exit_code = 2


class UsageError(BiclustError, ValueError):
    """Invalid configuration or call sequence."""

    exit_code = 3


class EstimationError(BiclustError, RuntimeError):
    """A Monte Carlo estimate could not be formed (e.g. zero denominator)."""

    exit_code = 4
