"""Self-describing binary container for named arrays.

Layout (all integers little-endian):

    magic   8 bytes  b"CDTENSR\\0"
    version u32
    count   u32
    entry*  name_len u32, name utf-8,
            tag u8 (0=f32, 1=f64, 2=u8),
            ndim u32, shape u64 * ndim,
            payload raw little-endian values

Round-trips are bit-exact; loading verifies magic, version, and payload
length.
"""

from __future__ import annotations

import os
import struct
from typing import Mapping

import numpy as np

MAGIC = b"CDTENSR\x00"
VERSION = 1

_TAG_TO_DTYPE = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("u1")}
_DTYPE_TO_TAG = {np.dtype(np.float32): 0, np.dtype(np.float64): 1, np.dtype(np.uint8): 2}


class CheckpointError(ValueError):
    """Raised on malformed or truncated checkpoint files."""


def save_arrays(path: str, entries: Mapping[str, np.ndarray]) -> None:
    """Write named arrays atomically (temp file + rename)."""
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<II", VERSION, len(entries))
    for name, arr in entries.items():
        arr = np.asarray(arr)
        if arr.dtype not in _DTYPE_TO_TAG:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for entry '{name}'")
        name_b = name.encode("utf-8")
        blob += struct.pack("<I", len(name_b))
        blob += name_b
        blob += struct.pack("<B", _DTYPE_TO_TAG[arr.dtype])
        blob += struct.pack("<I", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b""
        little = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        blob += np.ascontiguousarray(little).tobytes()
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(bytes(blob))
    os.replace(tmp, path)


def load_arrays(path: str) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint container")
    off = len(MAGIC)
    version, count = struct.unpack_from("<II", blob, off)
    off += 8
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported container version {version}")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", blob, off)
        off += 4
        name = blob[off:off + name_len].decode("utf-8")
        off += name_len
        tag, ndim = struct.unpack_from("<BI", blob, off)
        off += 5
        if tag not in _TAG_TO_DTYPE:
            raise CheckpointError(f"{path}: unknown precision tag {tag} for '{name}'")
        shape = struct.unpack_from(f"<{ndim}Q", blob, off) if ndim else ()
        off += 8 * ndim
        dtype = _TAG_TO_DTYPE[tag]
        count_items = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        nbytes = dtype.itemsize * count_items
        if off + nbytes > len(blob):
            raise CheckpointError(f"{path}: truncated payload for '{name}'")
        arr = np.frombuffer(blob, dtype=dtype, count=count_items, offset=off).reshape(shape)
        out[name] = arr.astype(arr.dtype.newbyteorder("="), copy=True)
        off += nbytes
    return out


def save_model(path: str, module, extra: Mapping[str, np.ndarray] | None = None) -> None:
    """Checkpoint every named parameter of a module tree."""
    entries: dict[str, np.ndarray] = {}
    for name, param in module.named_parameters():
        key = param.name or name
        if key in entries:
            raise CheckpointError(f"duplicate parameter name '{key}'")
        entries[key] = param.data
    if extra:
        for key, arr in extra.items():
            if key in entries:
                raise CheckpointError(f"extra entry '{key}' collides with a parameter")
            entries[key] = np.asarray(arr)
    save_arrays(path, entries)


def load_model(path: str, module) -> dict[str, np.ndarray]:
    """Restore parameters by name; returns non-parameter entries."""
    entries = load_arrays(path)
    leftover = dict(entries)
    for name, param in module.named_parameters():
        key = param.name or name
        if key not in entries:
            raise CheckpointError(f"checkpoint is missing parameter '{key}'")
        arr = leftover.pop(key)
        if arr.shape != param.data.shape:
            raise CheckpointError(
                f"parameter '{key}' has shape {param.data.shape}, checkpoint holds {arr.shape}")
        param.data = arr.astype(param.data.dtype, copy=True)
    return leftover


def pack_text(text: str) -> np.ndarray:
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).copy()


def unpack_text(arr: np.ndarray) -> str:
    return bytes(np.asarray(arr, dtype=np.uint8)).decode("utf-8")
