"""Exception types shared across the package.

The CLI maps these onto process exit codes, so every failure a user can
trigger should surface as one of them.
"""


class GensepError(Exception):
    """Base class for all package errors."""


class ConfigError(GensepError, ValueError):
    """Invalid configuration or argument value."""


class InputError(GensepError, ValueError):
    """Bad data: empty, negative, silent, corrupt or mismatched."""


class DimensionError(InputError):
    """Array shapes do not agree."""


class ConditioningError(InputError):
    """A linear system is singular or too ill-conditioned to trust."""


class UsageError(GensepError, RuntimeError):
    """An API was called out of order (e.g. backward with a foreign cache)."""


class NumericalError(GensepError, ArithmeticError):
    """A NaN or Inf appeared where finite values are required."""

    def __init__(self, message, telemetry=None):
        super().__init__(message)
        self.telemetry = telemetry or {}


class OracleError(NumericalError):
    """The finite-difference oracle produced a non-finite value."""
