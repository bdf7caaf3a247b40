"""Exception hierarchy shared by all ddvar modules."""


class DdvarError(Exception):
    """Base class for errors raised by ddvar."""


class ConfigurationError(DdvarError, ValueError):
    """Invalid configuration value or combination of values."""

    def __init__(self, message, key=None):
        self.key = key
        if key is not None:
            message = f"{key}: {message}"
        super().__init__(message)


class DimensionError(DdvarError, ValueError):
    """Array shapes or counts that do not match the expected layout."""


class StepSizeError(DdvarError):
    """Time step violates the CFL bound of the explicit scheme."""

    def __init__(self, message, courant=None, limit=None, step_index=None):
        self.courant = courant
        self.limit = limit
        self.step_index = step_index
        super().__init__(message)


class ProtocolError(DdvarError):
    """Missing or inconsistent data exchanged between subdomains."""


class NumericalError(DdvarError):
    """Breakdown of an iterative solver (non-SPD operator, divergence)."""
