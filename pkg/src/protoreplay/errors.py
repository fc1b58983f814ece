class DimensionError(ValueError):
    """Feature dimension does not match what the component was built for."""


class ParseError(ValueError):
    """Malformed CSV input."""


class NumericalError(ArithmeticError):
    """Non-finite activations, losses or gradients in the mixture network."""
