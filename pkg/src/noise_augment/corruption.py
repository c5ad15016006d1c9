"""The corruption distribution: geometric augmentation for the classification
pipeline and combined noise for the denoising reconstruction pipeline."""
import math
from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, Field
from scipy import ndimage

from src.tensor_core.rng import Rng
from src.tensor_core.tensor_ops import Tensor


class NoiseConfig(BaseModel):
    """Ranges are symmetric about the identity transform"""

    translation: int = Field(default=2, ge=0)  # pixels, per axis
    rotation: float = Field(default=15.0, ge=0.0)  # degrees
    skew: float = Field(default=0.1, ge=0.0)  # shear coefficient
    scale: float = Field(default=0.15, ge=0.0, lt=1.0)  # factor drawn from [1 - scale, 1 + scale]
    zero_mask_fraction: float = Field(default=0.25, ge=0.0, le=1.0)
    gaussian_std: float = Field(default=0.1, ge=0.0)
    augment: bool = True
    geometric: bool = True
    zero_mask: bool = True
    gaussian: bool = True

    @classmethod
    def disabled(cls) -> "NoiseConfig":
        return cls(
            translation=0, rotation=0.0, skew=0.0, scale=0.0,
            augment=False, geometric=False, zero_mask=False, gaussian=False,
        )


@dataclass(frozen=True)
class GeometricTransform:
    dx: float = 0.0  # columns
    dy: float = 0.0  # rows
    rotation: float = 0.0  # degrees
    skew: float = 0.0
    scale: float = 1.0

    @property
    def is_identity(self) -> bool:
        return (self.dx, self.dy, self.rotation, self.skew, self.scale) == (0.0, 0.0, 0.0, 0.0, 1.0)

    def matrix(self) -> np.ndarray:
        """Forward map on (row, col) offsets from the image centre"""
        theta = math.radians(self.rotation)
        rotate = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
        shear = np.array([[1.0, 0.0], [self.skew, 1.0]])
        return rotate @ shear @ (self.scale * np.eye(2))


def sample_transform(cfg: NoiseConfig, rng: Rng) -> GeometricTransform:
    t = cfg.translation
    return GeometricTransform(
        dx=float(rng.integers(-t, t)) if t else 0.0,
        dy=float(rng.integers(-t, t)) if t else 0.0,
        rotation=float(rng.uniform(-cfg.rotation, cfg.rotation)) if cfg.rotation else 0.0,
        skew=float(rng.uniform(-cfg.skew, cfg.skew)) if cfg.skew else 0.0,
        scale=float(rng.uniform(1.0 - cfg.scale, 1.0 + cfg.scale)) if cfg.scale else 1.0,
    )


def apply_transform(image: Tensor, transform: GeometricTransform) -> Tensor:
    """Bilinear inverse mapping of a [C,H,W] image; pixels pulled from outside are 0"""
    if transform.is_identity:
        return image.copy()
    _, h, w = image.shape
    centre = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    inverse = np.linalg.inv(transform.matrix())
    shift = np.array([transform.dy, transform.dx])
    offset = centre - inverse @ (centre + shift)
    return np.stack([
        ndimage.affine_transform(
            channel, inverse, offset=offset, order=1, mode="constant", cval=0.0, prefilter=False
        )
        for channel in image
    ])


def augment_geometric(image: Tensor, cfg: NoiseConfig, rng: Rng) -> Tensor:
    return apply_transform(image, sample_transform(cfg, rng))


def corrupt_for_denoising(image: Tensor, cfg: NoiseConfig, rng: Rng) -> Tensor:
    """Geometric transform, then zero-masking, then additive Gaussian noise.

    The input is left untouched; callers keep it as the clean reconstruction target.
    """
    noisy = augment_geometric(image, cfg, rng) if cfg.geometric else image.copy()
    if cfg.zero_mask and cfg.zero_mask_fraction > 0:
        noisy[rng.random(noisy.shape) < cfg.zero_mask_fraction] = 0.0
    if cfg.gaussian and cfg.gaussian_std > 0:
        noisy += rng.normal(0.0, cfg.gaussian_std, noisy.shape)
    return noisy


def augment_batch(images: Tensor, cfg: NoiseConfig, rng: Rng) -> Tensor:
    if not cfg.augment:
        return images
    return np.stack([augment_geometric(image, cfg, rng) for image in images])


def corrupt_batch(images: Tensor, cfg: NoiseConfig, rng: Rng) -> Tensor:
    return np.stack([corrupt_for_denoising(image, cfg, rng) for image in images])
