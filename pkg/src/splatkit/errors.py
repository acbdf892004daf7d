"""Exception types shared across the package."""


class SplatError(Exception):
    """Base class for all splatkit errors."""


class DegenerateRotationError(SplatError, ValueError):
    """Quaternion norm too small to define a rotation."""


class InvalidInputError(SplatError, ValueError):
    """Non-finite or structurally invalid numeric input."""


class DimensionMismatchError(SplatError, ValueError):
    """Operands whose shapes are required to agree do not."""


class NoSignalError(SplatError, ValueError):
    """A statistic is undefined because every sample is degenerate."""


class ConfigurationError(SplatError, ValueError):
    """Invalid or inconsistent run configuration."""


class FormatError(SplatError, ValueError):
    """Malformed file or wire payload."""


class PriorServiceError(SplatError, RuntimeError):
    """Prior service transport failure or server-reported error."""
