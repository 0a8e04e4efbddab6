"""Exception hierarchy shared across csiaug."""


class CsiError(Exception):
    """Base class for all csiaug errors."""


class DimensionError(CsiError, ValueError):
    """Shapes, lengths or indices disagree with the declared tensor dims."""


class FormatError(CsiError, ValueError):
    """A binary stream does not follow the expected layout."""


class DataError(CsiError, ValueError):
    """Payload values are invalid (NaN/Inf)."""

    def __init__(self, message: str, sample_index: int | None = None):
        super().__init__(message)
        self.sample_index = sample_index


class PreconditionError(CsiError, ValueError):
    """An operation was called with arguments outside its contract."""


class ConfigError(CsiError, ValueError):
    """Missing or inconsistent configuration values."""


class TrainingError(CsiError, RuntimeError):
    """Training diverged."""

    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message)
        self.epoch = epoch
