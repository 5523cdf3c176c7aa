"""Exception types shared across the package."""


class ScastError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(ScastError):
    """Invalid or inconsistent run configuration; names the offending field."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"config field '{field}': {message}")


class TensorFormatError(ScastError):
    """Malformed tensor file."""


class BadMagicError(TensorFormatError):
    pass


class UnknownDtypeError(TensorFormatError):
    pass


class TruncatedPayloadError(TensorFormatError):
    pass


class GenerationError(ScastError):
    """Synthetic world layout could not be realized."""


class DiscoveryError(ScastError):
    """Subcategory discovery produced no usable clusters for a class."""


class TrainingDivergedError(ScastError):
    """Loss became non-finite during training."""


class ScheduleExhaustedError(ScastError):
    """Asked for a self-training round past the end of the selection schedule."""


class UndefinedLossError(ScastError):
    """A loss was requested over an empty pixel set (all IGNORE)."""
