"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError (and
subclasses) plus DimensionError -> 3, NumericError -> 4.
"""


class FlowshotError(Exception):
    """Base class for all package errors."""


class ConfigError(FlowshotError):
    """Invalid configuration value or combination."""


class DataError(FlowshotError):
    """Dataset-level problem (bad file, violated invariant)."""


class SchemaError(DataError):
    """A required column is missing or the schema disagrees."""


class ParseError(DataError):
    """A cell could not be parsed; message carries the row index."""


class ModelFormatError(DataError):
    """Model file is truncated, versioned wrong, or dimensionally off."""


class DimensionError(FlowshotError, ValueError):
    """Matrix shapes do not line up; message names both shapes."""


class NumericError(FlowshotError, ArithmeticError):
    """A non-finite value appeared where the math requires finiteness."""
