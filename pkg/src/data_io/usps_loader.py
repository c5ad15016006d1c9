"""USPS container.

Layout (little-endian): ``b"USPS"``, uint32 count, uint32 height, uint32 width,
then ``count*height*width`` float32 pixels in [0, 1] (row-major per image), then
one uint8 label per image. See docs/usps-container.md for converting the common
USPS distributions into it.
"""
import logging
import struct
from pathlib import Path
from typing import Union

import numpy as np

from src.data_io.datasets import Dataset
from src.tensor_core.errors import DataFormatError, LengthError
from src.utils.benchmarking import benchmark

logger = logging.getLogger(__name__)

MAGIC = b"USPS"
HEADER = struct.Struct("<4s3I")


@benchmark("data_io", "load_usps")
def load_usps(path: Union[str, Path], num_classes: int = 10) -> Dataset:
    raw = Path(path).read_bytes()
    if len(raw) < HEADER.size:
        raise LengthError(f"{path}: {len(raw)} bytes is too short for a USPS header")
    magic, count, height, width = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DataFormatError(f"{path}: bad USPS magic {magic!r}, expected {MAGIC!r}")
    pixel_bytes = 4 * count * height * width
    if len(raw) < HEADER.size + pixel_bytes + count:
        raise LengthError(
            f"{path}: header declares {count} records of {height}x{width}, "
            f"need {HEADER.size + pixel_bytes + count} bytes, found {len(raw)}"
        )
    pixels = np.frombuffer(raw, dtype="<f4", count=count * height * width, offset=HEADER.size)
    images = pixels.astype(np.float64).reshape(count, 1, height, width)
    labels = np.frombuffer(raw, dtype=np.uint8, count=count, offset=HEADER.size + pixel_bytes).astype(np.int64)

    per_record = images.reshape(count, -1)
    bad_pixels = ~np.all(np.isfinite(per_record) & (per_record >= 0.0) & (per_record <= 1.0), axis=1)
    if bad_pixels.any():
        index = int(np.flatnonzero(bad_pixels)[0])
        raise DataFormatError(f"{path}: record {index} has pixels outside [0, 1]")
    if count and labels.max() >= num_classes:
        index = int(np.argmax(labels >= num_classes))
        raise DataFormatError(f"{path}: record {index} has label {labels[index]} outside [0, {num_classes})")

    logger.info(f"✅ Loaded {count} USPS records {height}x{width} from '{path}'")
    return Dataset(images=images, labels=labels, provenance=(str(path),), num_classes=num_classes)


def save_usps(ds: Dataset, path: Union[str, Path]) -> None:
    n, c, h, w = ds.images.shape
    if c != 1:
        raise DataFormatError(f"USPS records are single-channel, got {c} channels")
    labels = ds.labels if ds.labels is not None else np.zeros(n, dtype=np.int64)
    Path(path).write_bytes(
        HEADER.pack(MAGIC, n, h, w)
        + ds.images[:, 0].astype("<f4").tobytes()
        + labels.astype(np.uint8).tobytes()
    )
