"""
Exception types raised by gncformer.
"""


class GncformerError(Exception):
    """Base class for all gncformer errors."""


class ShapeError(GncformerError, ValueError):
    """Operand shapes do not fit the operation."""


class ConfigError(GncformerError, ValueError):
    """Invalid configuration value, key or file line."""


class CheckpointError(GncformerError):
    """Checkpoint file is unreadable or does not match its configuration."""


class TrainingError(GncformerError, RuntimeError):
    """Training aborted (non-finite loss, failed ablation cell)."""


class NumericalError(GncformerError, ValueError):
    """Non-finite values where finite ones are required."""


class GradientError(GncformerError, ValueError):
    """Backward pass requested from a tensor that is not on a gradient tape."""
