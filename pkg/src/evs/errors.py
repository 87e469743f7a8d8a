"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes (see ``evs.cli``); library code
raises them directly.
"""


class ParameterError(ValueError):
    """An argument is outside its documented domain."""


class ShapeError(ValueError):
    """Array arguments have incompatible shapes."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values."""


class CapabilityError(RuntimeError):
    """An operation requires a model capability that is not present."""


class InjectionError(LookupError):
    """A feature-injection request could not be satisfied by the cache."""


class TrainingError(RuntimeError):
    """Denoiser training diverged."""


class ConfigError(ValueError):
    """A config file or manifest is malformed or has the wrong version."""


class UsageError(ValueError):
    """Command-line usage error."""
