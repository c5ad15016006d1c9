"""Dense float64 tensor helpers.

A Tensor is a row-major ``numpy.ndarray`` of float64. The helpers here add the
shape checks the rest of the engine relies on; the arithmetic itself is numpy's.
"""
import hashlib
from typing import Callable, Iterable, Sequence, Tuple

import numpy as np

from src.tensor_core.errors import ArgumentError, DimensionError
from src.tensor_core.rng import Rng

Tensor = np.ndarray
DTYPE = np.float64


def as_tensor(values, shape: Sequence[int] = None) -> Tensor:
    """Copy ``values`` into a float64 tensor, optionally reshaping it"""
    data = np.array(values, dtype=DTYPE)
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if any(s <= 0 for s in shape):
            raise DimensionError(f"shape entries must be positive, got {shape}")
        if data.size != int(np.prod(shape)):
            raise DimensionError(
                f"cannot lay out {data.size} values as shape {shape}"
            )
        data = data.reshape(shape)
    return data


def reshape(t: Tensor, shape: Sequence[int]) -> Tensor:
    """New tensor with the same data in a different shape"""
    shape = tuple(int(s) for s in shape)
    if t.size != int(np.prod(shape)):
        raise DimensionError(f"cannot reshape {t.shape} to {shape}")
    return t.reshape(shape).copy()


def strides_for(shape: Sequence[int]) -> Tuple[int, ...]:
    """Row-major element strides; the last axis has stride 1"""
    strides = [1] * len(shape)
    for axis in range(len(shape) - 2, -1, -1):
        strides[axis] = strides[axis + 1] * int(shape[axis + 1])
    return tuple(strides)


def flat_index(index: Sequence[int], shape: Sequence[int]) -> int:
    if len(index) != len(shape):
        raise DimensionError(f"index {tuple(index)} has wrong rank for shape {tuple(shape)}")
    for i, size in zip(index, shape):
        if not 0 <= i < size:
            raise DimensionError(f"index {tuple(index)} out of bounds for shape {tuple(shape)}")
    return sum(int(i) * s for i, s in zip(index, strides_for(shape)))


def multi_index(flat: int, shape: Sequence[int]) -> Tuple[int, ...]:
    size = int(np.prod(shape))
    if not 0 <= flat < size:
        raise DimensionError(f"flat index {flat} out of bounds for shape {tuple(shape)}")
    index = []
    for stride in strides_for(shape):
        index.append(flat // stride)
        flat %= stride
    return tuple(index)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Rank-2 matrix product with an explicit inner-dimension check"""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return np.matmul(a, b)


def map_elementwise(t: Tensor, f: Callable[[float], float]) -> Tensor:
    """Apply a scalar function to every element, keeping the shape"""
    flat = np.fromiter((f(float(x)) for x in t.reshape(-1)), dtype=DTYPE, count=t.size)
    return flat.reshape(t.shape)


def add(a: Tensor, b: Tensor, broadcast_last_axis: bool = False) -> Tensor:
    """Elementwise sum; with ``broadcast_last_axis`` ``b`` is a bias over a's last axis"""
    if broadcast_last_axis:
        if b.ndim != 1 or a.shape[-1] != b.shape[0]:
            raise DimensionError(f"bias of shape {b.shape} does not match trailing axis of {a.shape}")
    elif a.shape != b.shape:
        raise DimensionError(f"cannot add shapes {a.shape} and {b.shape}")
    return a + b


def rand_normal(rng: Rng, shape: Sequence[int], mean: float = 0.0, stddev: float = 1.0) -> Tensor:
    if stddev < 0:
        raise ArgumentError(f"stddev must be >= 0, got {stddev}")
    shape = tuple(int(s) for s in shape)
    if stddev == 0:
        return np.full(shape, float(mean), dtype=DTYPE)
    return rng.normal(mean, stddev, shape)


def checksum(tensors: Iterable[Tensor]) -> str:
    """Digest of the exact bytes of a sequence of tensors"""
    digest = hashlib.sha256()
    for t in tensors:
        digest.update(np.ascontiguousarray(t, dtype=DTYPE).tobytes())
    return digest.hexdigest()
