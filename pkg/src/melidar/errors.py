"""Exception hierarchy shared across the package."""


class MelidarError(Exception):
    """Base class for all errors raised by melidar."""


class ConfigError(MelidarError, ValueError):
    pass


class FormatError(MelidarError):
    """A tensor container does not start with the expected magic/version."""


class TruncationError(FormatError):
    pass


class UnsupportedDtype(FormatError):
    pass


class ParseError(MelidarError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptySceneError(MelidarError):
    """No pixel in the sensor array sees valid geometry."""


class MappingError(MelidarError, IndexError):
    pass


class EmptyInputError(MelidarError, ValueError):
    pass


class OutOfRangeError(MelidarError, ValueError):
    pass


class DecodeError(MelidarError, ValueError):
    pass


class DomainError(MelidarError, ValueError):
    pass
