"""
Exceptions raised by the package.

Plain argument problems are reported with the built-in `ValueError`; the
classes below are used where a caller needs structured information about
the failure (a byte offset, a condition number, a training step).
"""


class ShapeError(ValueError):
    """Raised when tensor or volume extents do not agree."""


class NonFiniteError(ArithmeticError):
    """Raised when an operation produces NaN or infinite values."""

    def __init__(self, op_name):
        super().__init__(
            'operation \'%s\' produced non-finite values' % op_name)
        self.op_name = op_name


class FormatError(ValueError):
    """Raised when a binary file cannot be parsed.

    Attributes:
        path: File being parsed.
        offset: Byte offset where parsing failed.

    """
    def __init__(self, message, path=None, offset=None):
        where = []
        if path is not None:
            where.append(str(path))
        if offset is not None:
            where.append('offset %d' % offset)
        full = message
        if where:
            full = '%s (%s)' % (message, ', '.join(where))
        super().__init__(full)
        self.path = path
        self.offset = offset


class ConditioningError(ValueError):
    """Raised when a spherical harmonics design matrix is ill-conditioned."""

    def __init__(self, condition_number, limit):
        super().__init__(
            'design matrix is ill-conditioned: cond=%.3e exceeds %.1e' %
            (condition_number, limit))
        self.condition_number = condition_number


class DivergenceError(RuntimeError):
    """Raised when a training loss stops being finite.

    Attributes:
        step: Training step where divergence was detected.
        checkpoint: Path to the last checkpoint saved before divergence.

    """
    def __init__(self, step, checkpoint=None):
        message = 'training diverged at step %d' % step
        if checkpoint is not None:
            message += '; last good checkpoint: %s' % checkpoint
        super().__init__(message)
        self.step = step
        self.checkpoint = checkpoint


class ConfigError(ValueError):
    """Raised on invalid run configuration or missing run artifacts."""
