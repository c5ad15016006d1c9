"""Classification and reconstruction losses and their convex combination.

Losses are batch means rather than the per-sample sums of the objective as
usually written; the learning rates absorb the constant.
"""
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from src.tensor_core.errors import ArgumentError, DimensionError, TrainingError
from src.tensor_core.tensor_ops import Tensor

PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class LossValue:
    scalar: float
    batch_size: int

    def __post_init__(self):
        if not np.isfinite(self.scalar):
            raise TrainingError(f"loss is not finite: {self.scalar}")
        if self.batch_size < 1:
            raise ArgumentError(f"batch_size must be positive, got {self.batch_size}")


def one_hot(labels: np.ndarray, num_classes: int) -> Tensor:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ArgumentError(f"labels must lie in [0, {num_classes}), got range [{labels.min()}, {labels.max()}]")
    encoded = np.zeros((labels.shape[0], num_classes), dtype=np.float64)
    encoded[np.arange(labels.shape[0]), labels] = 1.0
    return encoded


def cross_entropy(pred: Tensor, onehot: Tensor) -> Tuple[LossValue, Tensor]:
    """Mean negative log-likelihood of softmax rows.

    Returns the loss and the gradient of softmax followed by this loss with
    respect to the logits, ``(pred - onehot) / B``.
    """
    if pred.shape != onehot.shape or pred.ndim != 2:
        raise DimensionError(f"cross_entropy shapes differ: pred {pred.shape}, onehot {onehot.shape}")
    valid = np.all((onehot == 0) | (onehot == 1), axis=1) & (onehot.sum(axis=1) == 1)
    if not valid.all():
        bad = int(np.flatnonzero(~valid)[0])
        raise ArgumentError(f"onehot row {bad} is not a one-hot vector: {onehot[bad].tolist()}")
    batch = pred.shape[0]
    clamped = np.clip(pred, PROB_FLOOR, 1.0)
    loss = float(-(onehot * np.log(clamped)).sum() / batch)
    return LossValue(loss, batch), (pred - onehot) / batch


def squared_loss(recon: Tensor, target: Tensor) -> Tuple[LossValue, Tensor]:
    """Mean over the batch of the per-sample squared L2 reconstruction error"""
    if recon.shape != target.shape:
        raise DimensionError(f"squared_loss shapes differ: recon {recon.shape}, target {target.shape}")
    batch = recon.shape[0]
    diff = recon - target
    return LossValue(float((diff * diff).sum() / batch), batch), 2.0 * diff / batch


def joint_objective(lc: LossValue, lr: LossValue, lam: float) -> float:
    if not 0.0 <= lam <= 1.0:
        raise ArgumentError(f"lambda must lie in [0, 1], got {lam}")
    return lam * lc.scalar + (1.0 - lam) * lr.scalar
