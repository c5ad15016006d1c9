"""Rendered oriented-bar glyphs with a controllable domain shift.

A fast stand-in for cross-domain digit pairs: each class is a bar at its own
orientation, drawn with random jitter; the target domain applies a fixed shift
to freshly drawn glyphs.
"""
import math
from typing import Literal, Tuple

import numpy as np
from pydantic import BaseModel, Field

from src.data_io.datasets import Dataset
from src.noise_augment.corruption import GeometricTransform, apply_transform
from src.tensor_core.errors import ArgumentError
from src.tensor_core.rng import Rng

ShiftKind = Literal["identity", "invert", "rotate", "background"]


class ShiftSpec(BaseModel):
    kind: ShiftKind = "invert"
    angle: float = 30.0  # degrees, for kind="rotate"
    offset: float = Field(default=0.3, ge=0.0, le=1.0)  # for kind="background"

    def apply(self, images: np.ndarray) -> np.ndarray:
        if self.kind == "identity":
            return images.copy()
        if self.kind == "invert":
            return 1.0 - images
        if self.kind == "background":
            return np.clip(images + self.offset, 0.0, 1.0)
        turn = GeometricTransform(rotation=self.angle)
        return np.clip(np.stack([apply_transform(image, turn) for image in images]), 0.0, 1.0)


def render_glyph(label: int, num_classes: int, size: int, rng: Rng) -> np.ndarray:
    """One [1, size, size] bar glyph for ``label`` with random pose jitter"""
    angle = math.pi * label / num_classes + rng.uniform(-0.15, 0.15)
    centre = (size - 1) / 2.0 + rng.uniform(-size / 14.0, size / 14.0, 2)
    half_length = size * rng.uniform(0.28, 0.36)
    half_width = max(size / 20.0, 0.6) * rng.uniform(0.9, 1.3)
    rows, cols = np.mgrid[0:size, 0:size].astype(np.float64)
    dy, dx = rows - centre[0], cols - centre[1]
    along = dx * math.cos(angle) + dy * math.sin(angle)
    across = -dx * math.sin(angle) + dy * math.cos(angle)
    overshoot = np.maximum(np.abs(along) - half_length, 0.0)
    distance = np.hypot(np.maximum(np.abs(across) - half_width, 0.0), overshoot)
    glyph = np.clip(1.0 - distance, 0.0, 1.0)
    glyph += rng.uniform(0.0, 0.08, glyph.shape)
    return np.clip(glyph, 0.0, 1.0)[None]


def render_domain(rng: Rng, n: int, num_classes: int, size: int) -> Tuple[np.ndarray, np.ndarray]:
    if num_classes < 2:
        raise ArgumentError(f"need at least 2 classes, got {num_classes}")
    if n % num_classes:
        raise ArgumentError(f"{n} samples cannot be split evenly over {num_classes} classes")
    labels = np.repeat(np.arange(num_classes, dtype=np.int64), n // num_classes)
    labels = labels[rng.permutation(n)]
    images = np.stack([render_glyph(int(label), num_classes, size, rng) for label in labels])
    return images, labels


def make_synthetic_shift(
    rng: Rng,
    n: int,
    shift: ShiftSpec,
    num_classes: int = 2,
    size: int = 28,
    paired: bool = False,
) -> Tuple[Dataset, Dataset]:
    """Labeled (source, target) glyph sets; the target is the shifted domain.

    With ``paired`` the target is the shift applied to the very source glyphs,
    otherwise target glyphs are drawn independently. Target labels are for
    evaluation only.
    """
    source_images, source_labels = render_domain(rng.substream("source"), n, num_classes, size)
    if paired:
        target_base, target_labels = source_images, source_labels
    else:
        target_base, target_labels = render_domain(rng.substream("target"), n, num_classes, size)
    provenance = ("synthetic", f"{num_classes} classes", f"{size}x{size}")
    source = Dataset(images=source_images, labels=source_labels, provenance=provenance, num_classes=num_classes)
    target = Dataset(
        images=shift.apply(target_base),
        labels=target_labels.copy(),
        provenance=provenance + (f"shift {shift.kind}",),
        num_classes=num_classes,
    )
    return source, target
