"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class EarncallError(Exception):
    exit_code = 5


class ParseError(EarncallError):
    exit_code = 3

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(EarncallError, ValueError):
    exit_code = 4


class InvariantError(EarncallError):
    exit_code = 5
