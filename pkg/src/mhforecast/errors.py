"""Exception taxonomy shared across the package.

The command-line layer maps these onto process exit codes: configuration
and shape problems exit 2, data/IO problems exit 3, numeric failures
(NaN/Inf where finite values are required) exit 4.
"""


class ShapeError(ValueError):
    """Operands have incompatible dimensions."""


class ContractError(ValueError):
    """An operation was called outside its documented contract."""


class ConfigError(ValueError):
    """A configuration value is out of its legal range."""


class DataError(ValueError):
    """A dataset cannot support the requested operation."""


class ParseError(DataError):
    """A file could not be parsed; message carries the location."""


class NumericError(ArithmeticError):
    """A non-finite value appeared where finite values are required."""
