"""Exception hierarchy.

Every error raised on purpose by the package derives from ``AeshieldError`` and
carries an ``exit_code`` used by the command line driver.
"""


class AeshieldError(Exception):
    exit_code = 1


class InvalidInputError(AeshieldError, ValueError):
    """Input values outside the domain of an operation (NaN, empty, bad label)."""

    exit_code = 2


class ShapeError(AeshieldError, ValueError):
    exit_code = 2


class ConfigError(AeshieldError, ValueError):
    """Incompatible or out-of-range configuration."""

    exit_code = 3


class StateError(AeshieldError, RuntimeError):
    """Object in the wrong state for the call (pixel scale, double normalization)."""

    exit_code = 4


class KindError(StateError):
    exit_code = 4


class IDXParseError(AeshieldError, ValueError):
    exit_code = 5


class WrongMagicError(IDXParseError):
    pass


class TruncatedFileError(IDXParseError):
    pass


class CountMismatchError(IDXParseError):
    pass


class FormatError(AeshieldError, ValueError):
    """Malformed serialized model file."""

    exit_code = 5


class MissingArtifactError(AeshieldError, FileNotFoundError):
    """A downstream command ran before the command producing its inputs."""

    exit_code = 6
