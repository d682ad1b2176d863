"""Exception hierarchy.

The CLI maps these onto exit codes: ``ConfigError`` -> 2, ``DataError`` -> 3,
``DivergenceError`` -> 4.
"""


class MMDFRError(Exception):
    exit_code = 1


class ConfigError(MMDFRError):
    exit_code = 2


class DataError(MMDFRError):
    exit_code = 3


class DimensionError(DataError, ValueError):
    pass


class AlignmentError(DataError):
    pass


class FitError(DataError):
    pass


class OutOfFrameError(DataError):
    pass


class FrontalizationError(DataError):
    pass


class BuildError(DataError):
    pass


class ParseError(DataError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class FormatError(DataError):
    """Bad magic, unsupported version or truncated binary file."""


class ProtocolError(DataError):
    pass


class DivergenceError(MMDFRError):
    exit_code = 4
