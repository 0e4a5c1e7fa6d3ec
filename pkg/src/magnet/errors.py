"""Exception types shared across the package."""


class MagnetError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(MagnetError, ValueError):
    """Array shapes are incompatible with an operation."""


class InputError(MagnetError, ValueError):
    """Caller supplied data outside an operation's domain."""


class ConfigurationError(MagnetError, ValueError):
    """A config value is invalid or inconsistent with loaded artifacts."""


class NumericError(MagnetError, ArithmeticError):
    """A computation produced NaN/Inf or a non-SPD matrix."""


class FittingError(MagnetError, ValueError):
    """A model fit could not be performed (rank deficiency, too few cells)."""


class SchemaError(MagnetError, ValueError):
    """A serialized artifact does not match its declared schema."""


class GenerationError(MagnetError, ValueError):
    """Synthetic scene generation could not satisfy its constraints."""


class SplitError(MagnetError, ValueError):
    """Dataset splitting or few-shot sampling ran out of per-cell data."""
