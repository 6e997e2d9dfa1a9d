"""Exception hierarchy shared across the package.

Two families matter to callers: DomainError covers anything caused by bad
inputs, bad files, or inconsistent parameters (the CLI maps these to exit
code 2), while InvariantError flags a broken internal assumption (exit 3).
"""


class TrapgateError(Exception):
    """Base class for all package errors."""


class DomainError(TrapgateError):
    """Invalid argument, parameter, or input value supplied by the caller."""


class FormatError(DomainError):
    """Malformed or unparseable document."""


class InvariantError(TrapgateError):
    """An internal invariant failed; indicates a bug, not a usage error."""
