"""Exception types raised by the engine and its I/O layers."""


class CKFError(Exception):
    """Base class for all package errors."""


class ConfigError(CKFError, ValueError):
    pass


class TimeOrderError(CKFError, ValueError):
    """An update was requested for a time earlier than the entity's last update."""


class InvariantError(CKFError, ValueError):
    """A belief failed its symmetry / positive-definiteness contract."""


class DuplicateEntityError(CKFError, KeyError):
    pass


class IngestError(CKFError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CheckpointError(CKFError):
    pass
