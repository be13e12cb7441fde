import numpy as np


class ShapeError(ValueError):
    """Array dimensions disagree."""


class DomainError(ValueError):
    """Input outside the unit hypercube."""


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Cholesky failed at every jitter level."""


class TrainingDivergedError(RuntimeError):
    """Objective or gradient became non-finite during training."""

    def __init__(self, message, epoch=None, depth=None):
        super().__init__(message)
        self.epoch = epoch
        self.depth = depth

    def __str__(self):
        parts = [super().__str__()]
        if self.epoch is not None:
            parts.append(f"epoch={self.epoch}")
        if self.depth is not None:
            parts.append(f"depth={self.depth}")
        return " ".join(parts)


class ObjectiveEvaluationError(RuntimeError):
    """The black-box objective failed or returned a non-finite value."""
