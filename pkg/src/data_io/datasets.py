"""Image collections with preprocessing provenance.

Labeled and unlabeled collections are separate types: the unlabeled one has no
label field at all, so nothing handed to the reconstruction pipeline can carry
target labels.
"""
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from src.tensor_core.errors import ArgumentError, DimensionError
from src.tensor_core.rng import Rng
from src.tensor_core.tensor_ops import Tensor


@dataclass(frozen=True)
class UnlabeledDataset:
    images: Tensor  # [N, C, H, W], pixels in [0, 1]
    provenance: Tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.images.ndim != 4:
            raise DimensionError(f"images must be [N, C, H, W], got {self.images.shape}")

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        return tuple(self.images.shape[1:])


@dataclass(frozen=True)
class Dataset:
    images: Tensor  # [N, C, H, W], pixels in [0, 1]
    labels: Optional[np.ndarray] = None  # int64 [N], values in [0, num_classes)
    provenance: Tuple[str, ...] = field(default_factory=tuple)
    num_classes: int = 10

    def __post_init__(self):
        if self.images.ndim != 4:
            raise DimensionError(f"images must be [N, C, H, W], got {self.images.shape}")
        if self.labels is not None:
            if self.labels.shape != (self.images.shape[0],):
                raise DimensionError(
                    f"{self.labels.shape[0]} labels for {self.images.shape[0]} images"
                )
            if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
                raise ArgumentError(
                    f"labels must lie in [0, {self.num_classes}), "
                    f"got range [{self.labels.min()}, {self.labels.max()}]"
                )

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def image_shape(self) -> Tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def unlabeled(self) -> UnlabeledDataset:
        return UnlabeledDataset(images=self.images, provenance=self.provenance + ("labels dropped",))

    def subset(self, indices: np.ndarray, note: Optional[str] = None) -> "Dataset":
        provenance = self.provenance + ((note,) if note else ())
        return Dataset(
            images=self.images[indices],
            labels=None if self.labels is None else self.labels[indices],
            provenance=provenance,
            num_classes=self.num_classes,
        )

    def head(self, n: Optional[int], rng: Optional[Rng] = None) -> "Dataset":
        """First ``n`` samples, after a seeded shuffle when ``rng`` is given"""
        if n is None or n >= len(self):
            return self
        order = rng.permutation(len(self)) if rng is not None else np.arange(len(self))
        return self.subset(np.sort(order[:n]), note=f"first {n} samples")


def split_validation(ds: Dataset, fraction: float, rng: Rng) -> Tuple[Dataset, Dataset]:
    """Seeded (train, validation) split holding out ``fraction`` of the samples"""
    if not 0.0 <= fraction < 1.0:
        raise ArgumentError(f"validation fraction must lie in [0, 1), got {fraction}")
    order = rng.permutation(len(ds))
    n_val = int(round(len(ds) * fraction))
    val_idx, train_idx = np.sort(order[:n_val]), np.sort(order[n_val:])
    return (
        ds.subset(train_idx, note=f"train split {1 - fraction:.2f}"),
        ds.subset(val_idx, note=f"validation split {fraction:.2f}"),
    )


def concat_unlabeled(first: UnlabeledDataset, second: UnlabeledDataset) -> UnlabeledDataset:
    if first.image_shape != second.image_shape:
        raise DimensionError(f"cannot concatenate images {first.image_shape} and {second.image_shape}")
    return UnlabeledDataset(
        images=np.concatenate([first.images, second.images]),
        provenance=first.provenance + ("+",) + second.provenance,
    )
