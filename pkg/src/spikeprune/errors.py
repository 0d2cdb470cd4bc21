"""Error taxonomy shared across the package."""


class DimensionError(ValueError):
    """Tensor shapes do not compose for the requested operation."""


class StateError(RuntimeError):
    """Operation requires state that has not been established (e.g. backward before forward)."""


class NumericError(ArithmeticError):
    """Non-finite values where finite ones are required."""


class ArgumentError(ValueError):
    """A scalar argument is outside its admissible range."""


class ConfigError(ValueError):
    """A config file key is unknown, malformed, or invalid."""
