"""Exception types shared across the package."""


class BearError(Exception):
    """Base class for errors raised by this package."""


class ShapeError(BearError, ValueError):
    """An operand's rank or extents violate an operation's contract."""


class ConfigError(BearError, ValueError):
    """A configuration key or value is invalid."""


class FormatError(BearError, ValueError):
    """A file does not conform to its declared format."""


class DataError(BearError, ValueError):
    """A dataset or derived input cannot be used."""


class NumericError(BearError, RuntimeError):
    """A computation produced non-finite or inconsistent numbers."""
