class CfxError(Exception):
    """Base class for every error raised by the extraction lab."""


class ConfigError(CfxError, ValueError):
    """
    Raised for invalid experiment configuration.

    Args:
        message (str): Human readable description.
        field (str): Dotted path of the offending config field, if known.
    """

    def __init__(self, message, field=None):
        self.field = field
        if field:
            message = f"{field}: {message}"
        super().__init__(message)


class InputError(CfxError, ValueError):
    """Raised when an operation receives data it cannot work with."""


class DegeneratePairError(InputError):
    """Raised when a CF/CCF pair collapses onto a single point."""


class TrainingError(CfxError, RuntimeError):
    """
    Raised when training diverges (non-finite loss).

    Args:
        epoch (int): 1-based epoch in which the loss became non-finite.
        batch (int): 0-based batch index within that epoch.
    """

    def __init__(self, epoch, batch, loss):
        self.epoch = epoch
        self.batch = batch
        self.loss = loss
        super().__init__(f"Training diverged at epoch {epoch}, batch {batch} (loss={loss})")
