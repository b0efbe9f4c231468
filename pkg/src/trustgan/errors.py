"""Exception hierarchy shared by every trustgan module."""


class TrustGANError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(TrustGANError, ValueError):
    """Input data has the wrong shape, range or contains non-finite values."""


class ConfigError(TrustGANError, ValueError):
    """A configuration value is invalid or inconsistent."""


class ContractError(TrustGANError, RuntimeError):
    """An API precondition was violated by the caller."""


class FormatError(TrustGANError, ValueError):
    """A binary container could not be decoded."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class StateError(TrustGANError, RuntimeError):
    """An object is not in a state that allows the requested operation."""


class TrainingDivergedError(TrustGANError, RuntimeError):
    def __init__(self, epoch, batch, what="loss"):
        super().__init__(f"non-finite {what} at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


class UndefinedMetricError(TrustGANError, ValueError):
    """A metric was requested on an empty sample set."""


class UnattainableOperatingPointError(TrustGANError, ValueError):
    """No confidence threshold reaches the requested true positive rate."""
