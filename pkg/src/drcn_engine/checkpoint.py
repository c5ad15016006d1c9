"""Binary checkpoint container.

    magic "DRCN" | uint32 version | uint32 len + architecture JSON |
    uint32 tensor count | per tensor: uint16 len + name, uint8 rank,
    uint32 dims..., float64 data

All integers and floats little-endian; tensors in declaration order.
"""
import json
import logging
import os
import struct
import tempfile
from pathlib import Path
from typing import Union

import numpy as np

from src.drcn_engine.model import DrcnModel
from src.nn_layers.specs import NetworkSpec
from src.tensor_core.errors import DataFormatError, LengthError

logger = logging.getLogger(__name__)

MAGIC = b"DRCN"
FORMAT_VERSION = 1


def atomic_write_bytes(path: Union[str, Path], payload: bytes) -> None:
    """Write to a temporary file in the same directory, then rename over ``path``"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def encode_checkpoint(model: DrcnModel) -> bytes:
    meta = model.spec.model_dump_json().encode("utf-8")
    parts = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(meta)), meta, struct.pack("<I", len(model.params))]
    for name, value in model.params.items():
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)) + encoded)
        parts.append(struct.pack(f"<B{value.ndim}I", value.ndim, *value.shape))
        parts.append(np.ascontiguousarray(value, dtype="<f8").tobytes())
    return b"".join(parts)


def decode_checkpoint(raw: bytes) -> DrcnModel:
    if raw[:4] != MAGIC:
        raise DataFormatError(f"bad checkpoint magic {raw[:4]!r}, expected {MAGIC!r}")
    offset = 4

    def take(fmt: str):
        nonlocal offset
        size = struct.calcsize(fmt)
        if offset + size > len(raw):
            raise LengthError(f"checkpoint truncated at byte {offset}")
        values = struct.unpack_from(fmt, raw, offset)
        offset += size
        return values

    def take_bytes(n: int) -> bytes:
        nonlocal offset
        if offset + n > len(raw):
            raise LengthError(f"checkpoint truncated at byte {offset}")
        chunk = raw[offset:offset + n]
        offset += n
        return chunk

    version, meta_len = take("<II")
    if version != FORMAT_VERSION:
        raise DataFormatError(f"unsupported checkpoint version {version}")
    spec = NetworkSpec.model_validate(json.loads(take_bytes(meta_len).decode("utf-8")))
    (count,) = take("<I")
    params = {}
    for _ in range(count):
        (name_len,) = take("<H")
        name = take_bytes(name_len).decode("utf-8")
        (rank,) = take("<B")
        shape = take(f"<{rank}I")
        size = int(np.prod(shape))
        params[name] = np.frombuffer(take_bytes(8 * size), dtype="<f8").astype(np.float64).reshape(shape)
    if offset != len(raw):
        raise DataFormatError(f"{len(raw) - offset} trailing bytes after the last tensor")
    return DrcnModel(spec, params)


def save_checkpoint(model: DrcnModel, path: Union[str, Path]) -> Path:
    atomic_write_bytes(path, encode_checkpoint(model))
    logger.info(f"💾 Saved checkpoint '{path}'")
    return Path(path)


def load_checkpoint(path: Union[str, Path]) -> DrcnModel:
    model = decode_checkpoint(Path(path).read_bytes())
    logger.info(f"✅ Loaded checkpoint '{path}' ({model.param_count()} parameters)")
    return model
