"""Reconstruction diagnostics: image grids of f_r outputs and the distance of
reconstructions to the source and target-style versions of the same images."""
import io
import logging
import math
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
from PIL import Image

from src.drcn_engine.checkpoint import atomic_write_bytes
from src.drcn_engine.model import DrcnModel, forward_reconstruct
from src.tensor_core.errors import ArgumentError

logger = logging.getLogger(__name__)

BLOCK_GAP = 2  # blank rows between the input block and the reconstruction block
FLAT_TILE_VALUE = 128


def tile_to_gray(image: np.ndarray) -> np.ndarray:
    """Min-max normalise one [C,H,W] tile to uint8; zero-range tiles become mid-gray"""
    gray = image.mean(axis=0)
    lo, hi = gray.min(), gray.max()
    if hi - lo <= 0:
        return np.full(gray.shape, FLAT_TILE_VALUE, dtype=np.uint8)
    return np.rint((gray - lo) / (hi - lo) * 255.0).astype(np.uint8)


def compose_grid(inputs: np.ndarray, recons: np.ndarray, columns: Optional[int] = None) -> np.ndarray:
    """Inputs tiled on top, their reconstructions in the same layout below"""
    n, _, h, w = inputs.shape
    columns = columns or math.ceil(math.sqrt(n))
    rows = math.ceil(n / columns)
    block_h = rows * h
    canvas = np.zeros((2 * block_h + BLOCK_GAP, columns * w), dtype=np.uint8)
    for i in range(n):
        r, c = divmod(i, columns)
        top = r * h
        canvas[top:top + h, c * w:(c + 1) * w] = tile_to_gray(inputs[i])
        top += block_h + BLOCK_GAP
        canvas[top:top + h, c * w:(c + 1) * w] = tile_to_gray(recons[i])
    return canvas


def dump_reconstruction_grid(
    model: DrcnModel, images: np.ndarray, path: Union[str, Path], columns: Optional[int] = None
) -> Path:
    """Feed clean images through f_r and write inputs + reconstructions as binary PGM"""
    if images.shape[0] < 1:
        raise ArgumentError("need at least one image for a reconstruction grid")
    canvas = compose_grid(images, forward_reconstruct(model, images), columns)
    buffer = io.BytesIO()
    Image.fromarray(canvas).save(buffer, format="PPM")
    atomic_write_bytes(path, buffer.getvalue())
    logger.info(f"🖼️  Wrote reconstruction grid '{path}' ({canvas.shape[1]}x{canvas.shape[0]})")
    return Path(path)


def reconstruction_shift_distances(
    model: DrcnModel, images: np.ndarray, shifted: np.ndarray
) -> Tuple[float, float]:
    """Mean squared distance of f_r(images) to ``images`` and to their shifted counterparts"""
    if images.shape != shifted.shape:
        raise ArgumentError(f"images {images.shape} and shifted {shifted.shape} differ in shape")
    recon = forward_reconstruct(model, images)
    to_source = float(((recon - images) ** 2).reshape(len(images), -1).sum(axis=1).mean())
    to_shifted = float(((recon - shifted) ** 2).reshape(len(images), -1).sum(axis=1).mean())
    return to_source, to_shifted
