"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class ConfigError(ValueError):
    """A configuration value violates a structural constraint."""


class NumericsError(FloatingPointError):
    """A computation produced NaN or Inf from finite inputs, or diverged."""


class DataError(ValueError):
    """Malformed dataset contents or file schema violation."""


class TaskViolationError(ValueError):
    """A mask does not satisfy the constraints of the requested task."""


class EmptyMaskError(ValueError):
    """A loss or metric was requested over an empty evaluation set."""
