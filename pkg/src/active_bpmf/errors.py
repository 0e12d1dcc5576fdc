"""Exception types raised across the package."""


class ShapeError(ValueError):
    """Array dimensions do not line up."""


class DomainError(ValueError):
    """Argument lies outside the mathematical domain of an operation."""


class RangeError(DomainError):
    """Value read from a file lies outside its allowed range."""


class ConfigError(ValueError):
    """Invalid configuration value."""


class IntegrityError(ValueError):
    """Data violates a uniqueness, density or completeness invariant."""


class FormatError(ValueError):
    """Input file does not follow the expected layout."""


class ParseError(FormatError):
    """A field could not be parsed as a number."""


class SamplingError(ValueError):
    """Not enough observations to draw the requested subset."""


class InitializationError(RuntimeError):
    """MCMC chain cannot start from the given state."""


class PoolExhaustedWarning(UserWarning):
    """Fewer candidates remain than the requested batch size."""
