class BQTFError(Exception):
    pass


class InvalidArgumentError(BQTFError, ValueError):
    pass


class ValidationError(BQTFError, ValueError):
    pass


class ConfigError(BQTFError, ValueError):
    pass


class DegenerateTruncationError(BQTFError, ArithmeticError):
    pass


class NumericalError(BQTFError, ArithmeticError):
    pass


class FactorizationError(BQTFError, ArithmeticError):
    def __init__(self, message: str, diagonal=None):
        super().__init__(message)
        # diagonal of the matrix that failed to factor, for inspection
        self.diagonal = diagonal
