"""Exception hierarchy shared across the package."""


class DynamixError(Exception):
    """Base class for all package errors."""


class DivergenceError(DynamixError, FloatingPointError):
    """Numerical integration produced a non-finite state."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"non-finite state encountered at step {step}")


class DegenerateSignalError(DynamixError, ValueError):
    """A signal (or one of its dimensions) has no variance to work with."""


class NoPeriodicityError(DynamixError, ValueError):
    """Autocorrelation peak too weak for a positional encoding."""


class InsufficientDataError(DynamixError, ValueError):
    """Not enough data (e.g. neighbour pairs) for a stable estimate."""


class ConfigurationError(DynamixError, ValueError):
    """Structural hyperparameters or config values are inconsistent."""


class FormatError(DynamixError, ValueError):
    """A dataset or checkpoint file is malformed."""


class TrainingDivergenceError(DynamixError, FloatingPointError):
    """Loss or gradient became non-finite during training."""

    def __init__(self, epoch, batch, message=None, checkpoint=None):
        self.epoch = epoch
        self.batch = batch
        self.checkpoint = checkpoint
        super().__init__(
            message or f"non-finite loss/gradient at epoch {epoch}, batch {batch}"
        )
