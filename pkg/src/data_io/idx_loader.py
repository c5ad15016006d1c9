"""MNIST IDX container: big-endian header, unsigned byte payload."""
import logging
import struct
from pathlib import Path
from typing import Optional, Union

import numpy as np

from src.data_io.datasets import Dataset
from src.tensor_core.errors import DataFormatError, LengthError
from src.utils.benchmarking import benchmark

logger = logging.getLogger(__name__)

IMAGE_MAGIC = 2051  # 0x00000803: unsigned byte, 3 dims
LABEL_MAGIC = 2049  # 0x00000801: unsigned byte, 1 dim

PathLike = Union[str, Path]


def _read_idx(path: PathLike, expected_magic: int) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise LengthError(f"{path}: {len(raw)} bytes is too short for an IDX header")
    magic = struct.unpack(">I", raw[:4])[0]
    if magic != expected_magic:
        raise DataFormatError(
            f"{path}: bad IDX magic {magic} (0x{magic:08x}), expected {expected_magic} (0x{expected_magic:08x})"
        )
    ndim = magic & 0xFF
    header_len = 4 + 4 * ndim
    if len(raw) < header_len:
        raise LengthError(f"{path}: header declares {ndim} dims but the file has {len(raw)} bytes")
    dims = struct.unpack(f">{ndim}I", raw[4:header_len])
    payload = int(np.prod(dims))
    if len(raw) < header_len + payload:
        raise LengthError(
            f"{path}: dims {dims} need {payload} payload bytes, found {len(raw) - header_len}"
        )
    return np.frombuffer(raw, dtype=">u1", count=payload, offset=header_len).reshape(dims)


@benchmark("data_io", "load_idx")
def load_idx(images_path: PathLike, labels_path: Optional[PathLike] = None, num_classes: int = 10) -> Dataset:
    """Decode an IDX image file (and optional label file); pixels scaled by 1/255"""
    pixels = _read_idx(images_path, IMAGE_MAGIC)
    images = (pixels.astype(np.float64) / 255.0)[:, None, :, :]

    labels = None
    if labels_path is not None:
        raw_labels = _read_idx(labels_path, LABEL_MAGIC).astype(np.int64)
        if raw_labels.shape[0] != images.shape[0]:
            raise DataFormatError(
                f"{labels_path}: {raw_labels.shape[0]} labels for {images.shape[0]} images"
            )
        if raw_labels.size and raw_labels.max() >= num_classes:
            bad = int(np.argmax(raw_labels >= num_classes))
            raise DataFormatError(
                f"{labels_path}: label {raw_labels[bad]} at index {bad} is outside [0, {num_classes})"
            )
        labels = raw_labels

    logger.info(f"✅ Loaded {images.shape[0]} IDX images {images.shape[2]}x{images.shape[3]} from '{images_path}'")
    return Dataset(images=images, labels=labels, provenance=(str(images_path), "scale /255"), num_classes=num_classes)


def save_idx(ds: Dataset, images_path: PathLike, labels_path: Optional[PathLike] = None) -> None:
    """Encode single-channel images (and labels) back into IDX files"""
    n, c, h, w = ds.images.shape
    if c != 1:
        raise DataFormatError(f"IDX images are single-channel, got {c} channels")
    pixels = np.rint(np.clip(ds.images[:, 0], 0.0, 1.0) * 255.0).astype(">u1")
    Path(images_path).write_bytes(struct.pack(">4I", IMAGE_MAGIC, n, h, w) + pixels.tobytes())
    if labels_path is not None and ds.labels is not None:
        Path(labels_path).write_bytes(
            struct.pack(">2I", LABEL_MAGIC, n) + ds.labels.astype(">u1").tobytes()
        )
