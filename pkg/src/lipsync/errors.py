"""Exception types shared across the package."""


class LipSyncError(Exception):
    """Base class for every error this package raises deliberately."""


class AudioFormatError(LipSyncError):
    """Malformed RIFF/WAVE container."""

    def __init__(self, message, path=None, offset=None):
        self.path = path
        self.offset = offset
        if path is not None:
            message = f"{path}: {message}"
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)


class UnsupportedAudioError(LipSyncError):
    """Valid container but a codec or sample layout we do not decode."""


class EmptyInputError(LipSyncError):
    """Input carries no usable samples or frames."""


class InsufficientFramesError(LipSyncError):
    """An operation needs more time steps than the input provides."""


class FileFormatError(LipSyncError):
    """Binary feature/animation/checkpoint file violates its format."""

    def __init__(self, message, path=None, offset=None):
        self.path = path
        self.offset = offset
        if path is not None:
            message = f"{path}: {message}"
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)


class MeshParseError(LipSyncError):
    """Wavefront OBJ or landmark sidecar could not be parsed."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        if path is not None:
            message = f"{path}: {message}"
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message)


class TopologyError(LipSyncError):
    """Vertex counts of mesh and animation data disagree."""


class ShapeError(LipSyncError):
    """Array dimensions do not match the operation's contract."""


class StateError(LipSyncError):
    """Operation called out of order, e.g. backward without a forward cache."""


class DataError(LipSyncError):
    """Training corpus is empty or internally inconsistent."""


class UsageError(LipSyncError):
    """Bad command-line invocation."""
