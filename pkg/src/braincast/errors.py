"""Exception types; the CLI maps each family to an exit code."""


class BraincastError(Exception):
    """Base class for package errors."""


class DataError(BraincastError, ValueError):
    """Malformed or inconsistent input data (CSV, manifest, window geometry)."""


class NumericalError(BraincastError, ArithmeticError):
    """Non-finite values where finite ones are required."""


class DivergenceError(NumericalError):
    """Training produced a non-finite loss."""

    def __init__(self, message, epoch=None, checkpoint=None):
        super().__init__(message)
        self.epoch = epoch
        self.checkpoint = checkpoint


class CheckpointError(BraincastError, IOError):
    """Checkpoint file is truncated, inconsistent, or of an unknown version."""


class ConfigError(BraincastError, ValueError):
    """Invalid or mutually inconsistent configuration or shapes."""
