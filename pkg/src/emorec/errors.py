class EmorecError(Exception):
    """Base class for all package errors."""


class ParseError(EmorecError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(EmorecError):
    pass


class ConfigError(EmorecError):
    pass


class NumericalError(EmorecError):
    """Training diverged or a gradient became non-finite."""
