"""Exception hierarchy shared by every module."""

from __future__ import annotations


class TndisError(Exception):
    """Base class for all library errors."""


class ShapeError(TndisError, ValueError):
    """An array has the wrong number of axes or incompatible extents."""


class DimensionError(ShapeError):
    """Paired axes of a contraction have different extents."""


class ParameterError(TndisError, ValueError):
    """A scalar or structural argument is outside its admissible range."""


class CapacityError(TndisError, ValueError):
    """A request exceeds the dense-evaluation size bound."""


class DegenerateInputError(TndisError, ValueError):
    """An operand is degenerate (e.g. zero norm) where a normalisation is needed."""


class NumericalError(TndisError, ArithmeticError):
    """A numerical routine failed to converge."""


class StateError(TndisError, RuntimeError):
    """An operation was invoked in the wrong object state."""


class TrainingError(TndisError, RuntimeError):
    """Training diverged."""

    def __init__(self, message: str, epoch: int):
        super().__init__(f"{message} (epoch {epoch})")
        self.epoch = epoch


class FormatError(TndisError, ValueError):
    """A file does not follow its binary or JSON format."""


class ConsistencyError(TndisError, ValueError):
    """Two sources of the same information disagree (e.g. image vs label counts)."""
