"""Exception hierarchy shared by every ccdehaze module."""


class DehazeError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(DehazeError, ValueError):
    pass


class ShapeError(DehazeError, ValueError):
    pass


class ConfigError(DehazeError, ValueError):
    pass


class DatasetError(DehazeError):
    pass


class LeakageError(DatasetError):
    """A hazy image landed in a different partition than its clear source."""

    def __init__(self, message, violations=()):
        super().__init__(message)
        self.violations = list(violations)


class NumericError(DehazeError, FloatingPointError):
    def __init__(self, message, identity_keys=()):
        super().__init__(message)
        self.identity_keys = list(identity_keys)


class CheckpointError(DehazeError):
    pass


class CheckpointVersionError(CheckpointError):
    pass
