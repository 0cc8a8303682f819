"""Exception types shared across the package."""


class SWMError(Exception):
    """Base class for package errors."""


class ValidationError(SWMError, ValueError):
    """Input violates a documented invariant or schema."""


class ConfigurationError(ValidationError):
    """A planner configuration breaks one of its inequalities."""


class DegenerateInputError(SWMError):
    """Input is well-formed but too degenerate to process (e.g. a stationary chunk)."""


class NoSinkAvailable(SWMError):
    """No lookahead panorama is left after exclusion; plan the chunk without a sink."""
