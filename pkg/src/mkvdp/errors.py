"""Exception hierarchy; the CLI maps these onto exit codes."""


class MkvError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(MkvError, ValueError):
    """Invalid configuration: unknown registry key, bad range, missing field."""


class ModelError(MkvError, ArithmeticError):
    """A model evaluated to something outside its contract (non-finite, bad action)."""


class NumericalBlowup(MkvError, ArithmeticError):
    """A simulated state became non-finite."""


class SizeError(MkvError, ValueError):
    """A requested exact computation exceeds its configured size cap."""


class UnsupportedStructure(MkvError, ValueError):
    """The finite model needs diagonal, non-degenerate diffusion and d <= 2."""


class PolicyError(MkvError, LookupError):
    """A policy was queried outside its domain."""
