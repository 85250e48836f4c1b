"""Exception types shared across the package."""


class KineticEmError(Exception):
    """Base class for all package-specific errors."""


class DomainError(KineticEmError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ConfigError(KineticEmError, ValueError):
    """A configuration value is invalid or inconsistent with another."""


class ExtrapolationError(DomainError):
    """A tabulated drift was queried outside its grid."""


class ConfigWarning(UserWarning):
    """A configuration is legal but degenerate or likely unintended."""
