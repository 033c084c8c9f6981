"""Exception types shared across the package.

The command line maps these onto exit codes: usage problems are handled by
argparse itself (exit 1), :class:`DataError` exits with 2 and
:class:`InfeasibleError` with 3.
"""

from __future__ import annotations


class CorrkitError(Exception):
    """Base class for all package-specific errors."""


class DomainError(CorrkitError, ValueError):
    """An argument is outside the mathematical domain of an operation."""


class DataError(CorrkitError, ValueError):
    """Input data is malformed or internally inconsistent."""


class ConfigError(CorrkitError, ValueError):
    """A configuration file or option combination is invalid."""


class InfeasibleError(CorrkitError, RuntimeError):
    """An optimization problem has no feasible point or is degenerate."""
