class BDIError(Exception):
    """Base class for errors raised by bdieval operations."""


class FormatError(BDIError, ValueError):
    """An input file violates its format; ``lineno`` is 1-based when known."""

    def __init__(self, message, lineno=None):
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno
