"""Exception hierarchy shared by the library and the command line."""


class OpfieldError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class ConfigError(OpfieldError):
    """Malformed input file, unknown tag, or inconsistent configuration."""

    exit_code = 2


class DomainError(ConfigError, ValueError):
    """An argument lies outside the domain on which an operation is defined."""


class ConflictError(ConfigError):
    """Two interfaces resolve to the same mesh entity."""


class ModelError(OpfieldError):
    """The operator model violates ellipticity/positivity, or is not SPD."""

    exit_code = 3


class NumericError(OpfieldError):
    """A factorization or solve failed numerically."""

    exit_code = 3


class ConstraintDegeneracyError(NumericError):
    """Hard constraints are linearly dependent under the prior covariance."""
