"""Training objectives."""
from typing import Optional

import numpy as np

from ..config import LossMode
from ..tensor import Tape, Tensor
from ..tensor import ops


def quality_loss(predictions: Tensor, labels, mode: LossMode = "squared",
                 tape: Optional[Tape] = None) -> Tensor:
    """Regression of predicted quality onto labels in [0, 1].

    squared: mean of (pred - label)^2. absolute: mean of |pred - label|,
    the norm of a scalar residual.
    """
    labels = np.asarray(labels, dtype=np.float64).reshape(-1)
    if labels.size and (labels.min() < 0.0 or labels.max() > 1.0):
        raise ValueError(f"quality labels must lie in [0, 1], got [{labels.min()}, {labels.max()}]")
    if not isinstance(predictions, Tensor):
        predictions = Tensor(np.asarray(predictions, dtype=np.float64))
    if mode == "squared":
        return ops.mean_squared_error(predictions, labels, tape=tape)
    if mode == "absolute":
        return ops.mean_absolute_error(predictions, labels, tape=tape)
    raise ValueError(f"unknown loss mode {mode!r}; expected squared or absolute")


def classification_loss(logits: Tensor, labels, tape: Optional[Tape] = None) -> Tensor:
    return ops.softmax_cross_entropy(logits, labels, tape=tape)
