"""Exception types shared across the package."""


class GoldfishError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(GoldfishError):
    """Invalid configuration value, unknown key, or inconsistent setup."""


class ShapeError(GoldfishError):
    """Array dimensions do not match what an operation requires."""


class DomainError(GoldfishError):
    """Numeric argument outside the mathematically valid range."""


class DataError(GoldfishError):
    """Dataset contents violate an invariant (ids, labels, sizes)."""


class FormatError(GoldfishError):
    """A file on disk is not in the expected binary/text format."""
