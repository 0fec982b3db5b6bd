"""Flat binary parameter checkpoints.

Layout (little-endian)::

    b"GEDCKPT1"  u32 version
    repeated:    u16 name_len, name (utf-8), u8 rank, u32 dims[rank],
                 f64 values[prod(dims)]
"""

import struct
from collections import OrderedDict

import numpy as np

from .wav import atomic_write_bytes

MAGIC = b"GEDCKPT1"
VERSION = 1


class CheckpointError(OSError):
    pass


def checkpoint_bytes(arrays):
    parts = [MAGIC, struct.pack("<I", VERSION)]
    for name, value in arrays.items():
        value = np.asarray(value, dtype=np.float64)
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF or value.ndim > 0xFF:
            raise ValueError(f"tensor {name!r} cannot be stored")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", value.ndim))
        parts.append(struct.pack(f"<{value.ndim}I", *value.shape))
        parts.append(value.astype("<f8").tobytes())
    return b"".join(parts)


def parse_checkpoint(data):
    if data[:8] != MAGIC:
        raise CheckpointError("bad checkpoint magic")
    if len(data) < 12:
        raise CheckpointError("truncated checkpoint header")
    (version,) = struct.unpack_from("<I", data, 8)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 12
    out = OrderedDict()

    def take(n, what):
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError(f"truncated checkpoint while reading {what}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    while pos < len(data):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        name = take(name_len, "name").decode("utf-8")
        (rank,) = struct.unpack("<B", take(1, f"rank of {name!r}"))
        shape = struct.unpack(f"<{rank}I", take(4 * rank, f"dims of {name!r}"))
        count = int(np.prod(shape)) if rank else 1
        values = np.frombuffer(take(8 * count, f"values of {name!r}"), dtype="<f8")
        out[name] = values.astype(np.float64).reshape(shape)
    return out


def save_checkpoint(path, arrays):
    """Write ``name -> array`` (or a ``GeneratorParams``) atomically."""
    if hasattr(arrays, "arrays"):
        arrays = arrays.arrays()
    atomic_write_bytes(path, checkpoint_bytes(arrays))


def load_checkpoint(path):
    with open(path, "rb") as f:
        return parse_checkpoint(f.read())
