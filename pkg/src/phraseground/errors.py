"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands have incompatible shapes."""


class ParameterError(ValueError):
    """A scalar argument is outside its legal range."""


class ConfigError(ValueError):
    """Invalid configuration value, key, or file."""


class ContractError(RuntimeError):
    """An API usage rule was broken (non-scalar loss, repeated backward, ...)."""


class DivergenceError(ArithmeticError):
    """A computation produced a non-finite value."""
