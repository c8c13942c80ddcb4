"""Bit-exact binary containers for tensors, bundles, and checkpoints.

Tensor record layout (all integers little-endian):

    magic   4 bytes  b"DPNO"
    version u32      1
    dtype   u32      0 = float32, 1 = float64
    ndim    u32
    dims    ndim * u64
    payload row-major little-endian scalars

A checkpoint is a sequence of (u32 name-length, name bytes UTF-8, tensor
record) repeated to EOF. The config echo rides along as a reserved entry
``__config_json__`` holding the UTF-8 bytes of a JSON document as float64
values (the format only admits float records; byte values are exact in
float64).
"""
from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

__all__ = [
    "TensorFormatError",
    "write_tensor",
    "read_tensor",
    "save_tensor",
    "load_tensor",
    "save_checkpoint",
    "load_checkpoint",
]

MAGIC = b"DPNO"
VERSION = 1
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
CONFIG_KEY = "__config_json__"


class TensorFormatError(ValueError):
    pass


def _read_exact(f, size: int, what: str) -> bytes:
    buf = f.read(size)
    if len(buf) != size:
        raise TensorFormatError(f"truncated container: expected {size} bytes for {what}")
    return buf


def write_tensor(f, arr: np.ndarray) -> None:
    arr = np.asarray(arr)
    if arr.dtype not in _DTYPE_CODES:
        raise TensorFormatError(f"unsupported dtype {arr.dtype} (float32/float64 only)")
    f.write(MAGIC)
    f.write(struct.pack("<III", VERSION, _DTYPE_CODES[arr.dtype], arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    f.write(np.ascontiguousarray(arr).astype(arr.dtype.newbyteorder("<")).tobytes())


def read_tensor(f) -> np.ndarray:
    magic = _read_exact(f, 4, "magic")
    if magic != MAGIC:
        raise TensorFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version, code, ndim = struct.unpack("<III", _read_exact(f, 12, "header"))
    if version != VERSION:
        raise TensorFormatError(f"unsupported container version {version}")
    if code not in _CODE_DTYPES:
        raise TensorFormatError(f"unknown dtype code {code}")
    dims = struct.unpack(f"<{ndim}Q", _read_exact(f, 8 * ndim, "dims"))
    dtype = _CODE_DTYPES[code]
    count = int(np.prod(dims)) if ndim else 1
    payload = _read_exact(f, count * dtype.itemsize, "payload")
    arr = np.frombuffer(payload, dtype=dtype).reshape(dims)
    return arr.astype(dtype.newbyteorder("="))


def save_tensor(path, arr: np.ndarray) -> None:
    with open(path, "wb") as f:
        write_tensor(f, arr)


def load_tensor(path) -> np.ndarray:
    with open(path, "rb") as f:
        arr = read_tensor(f)
        if f.read(1):
            raise TensorFormatError(f"trailing bytes after tensor record in {path}")
    return arr


def save_checkpoint(path, named_arrays: dict, config: dict) -> None:
    """Write parameter arrays plus the config echo as one record sequence."""
    entries = dict(named_arrays)
    if CONFIG_KEY in entries:
        raise TensorFormatError(f"'{CONFIG_KEY}' is reserved for the config echo")
    blob = json.dumps(config, sort_keys=True).encode("utf-8")
    entries[CONFIG_KEY] = np.frombuffer(blob, dtype=np.uint8).astype(np.float64)
    with open(path, "wb") as f:
        for name, arr in entries.items():
            raw = name.encode("utf-8")
            f.write(struct.pack("<I", len(raw)))
            f.write(raw)
            write_tensor(f, arr)


def load_checkpoint(path) -> tuple:
    """Returns (named arrays, config dict)."""
    arrays = {}
    with open(path, "rb") as f:
        while True:
            head = f.read(4)
            if not head:
                break
            if len(head) != 4:
                raise TensorFormatError("truncated checkpoint entry header")
            (name_len,) = struct.unpack("<I", head)
            name = _read_exact(f, name_len, "entry name").decode("utf-8")
            arrays[name] = read_tensor(f)
    if CONFIG_KEY not in arrays:
        raise TensorFormatError("checkpoint is missing its config echo")
    blob = bytes(arrays.pop(CONFIG_KEY).astype(np.uint8))
    return arrays, json.loads(blob.decode("utf-8"))
