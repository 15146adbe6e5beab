"""Exception types raised across the package."""


class RadcamError(Exception):
    """Base class for every error raised by radcam."""


class ResultBehindCamera(RadcamError):
    pass


class AboveHorizon(RadcamError):
    pass


class ConfigInvalid(RadcamError):
    def __init__(self, field, message=""):
        self.field = field
        super().__init__(f"invalid config field {field!r}" + (f": {message}" if message else ""))


class SchemaError(RadcamError):
    def __init__(self, message, line=None):
        self.line = line
        loc = f"line {line}: " if line is not None else ""
        super().__init__(loc + message)


class ShapeMismatch(RadcamError):
    pass


class MissingGrad(RadcamError):
    pass


class UnknownId(RadcamError):
    pass


class MissingDepth(RadcamError):
    pass


class OverlapError(RadcamError):
    pass


class DivergenceDetected(RadcamError):
    pass


class EmptyDataset(RadcamError):
    pass


class NonFiniteError(RadcamError):
    pass


class IoError(RadcamError):
    """A file could not be read or written; ``path`` names it."""

    def __init__(self, path, reason=""):
        self.path = str(path)
        super().__init__(f"{self.path}: {reason}" if reason else self.path)
