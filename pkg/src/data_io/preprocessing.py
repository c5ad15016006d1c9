from typing import Literal, Tuple

import numpy as np
from scipy import ndimage

from src.data_io.datasets import Dataset
from src.tensor_core.errors import ArgumentError

NormalizeMode = Literal["unit-range", "none"]


def rescale_bilinear(images: np.ndarray, size: Tuple[int, int]) -> np.ndarray:
    """Bilinear resize of [N, C, H, W] images with pixel-area aligned sampling and conserved mass"""
    n, c, h, w = images.shape
    if (h, w) == tuple(size):
        return images.copy()
    zoom = (1.0, 1.0, size[0] / h, size[1] / w)
    out = ndimage.zoom(images, zoom, order=1, mode="nearest", grid_mode=True, prefilter=False)
    # each plane keeps its mean, so total mass scales with the area ratio
    before = images.mean(axis=(2, 3), keepdims=True)
    after = out.mean(axis=(2, 3), keepdims=True)
    return out * np.divide(before, after, out=np.ones_like(after), where=after != 0)


def normalize_unit_range(images: np.ndarray) -> np.ndarray:
    """Per-image min-max scaling to [0, 1]; constant images are clipped instead"""
    flat = images.reshape(images.shape[0], -1)
    lo = flat.min(axis=1, keepdims=True)
    hi = flat.max(axis=1, keepdims=True)
    span = hi - lo
    constant = span[:, 0] == 0
    out = np.empty_like(flat)
    out[~constant] = (flat[~constant] - lo[~constant]) / span[~constant]
    out[constant] = np.clip(flat[constant], 0.0, 1.0)
    return out.reshape(images.shape)


def preprocess(ds: Dataset, size: Tuple[int, int], normalize: NormalizeMode = "unit-range") -> Dataset:
    if normalize not in ("unit-range", "none"):
        raise ArgumentError(f"unknown normalize mode '{normalize}'")
    images = ds.images
    steps = []
    if images.shape[2:] != tuple(size):
        images = rescale_bilinear(images, size)
        steps.append(f"rescale {size[0]}x{size[1]}")
    if normalize == "unit-range":
        normalized = normalize_unit_range(images)
        if not np.array_equal(normalized, images):
            images = normalized
            steps.append("normalize unit-range")
    if not steps:
        return ds
    return Dataset(images=images, labels=ds.labels, provenance=ds.provenance + tuple(steps), num_classes=ds.num_classes)
