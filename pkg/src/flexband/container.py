"""Binary tensor container: magic "FLXT", versioned, named row-major tensors.

Layout (all integers little-endian):
    magic: 4 bytes "FLXT"
    format version: u16
    tensor count: u16
    per tensor:
        name length: u16, then UTF-8 name bytes
        dtype code: u8 (0 = f32, 1 = f64, 2 = u8)
        rank: u8
        dims: u32 each
        payload: row-major little-endian values

Bulk data is conventionally stored as f32 (computation stays f64); the
writer stores arrays exactly as given.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ValidationError

MAGIC = b"FLXT"
FORMAT_VERSION = 1

_DTYPE_CODES = {
    np.dtype("<f4"): 0,
    np.dtype("<f8"): 1,
    np.dtype("u1"): 2,
}
_CODE_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("u1")}


def write_tensors(path, tensors: dict) -> None:
    """Write named arrays to the container file; names must be unique."""
    names = list(tensors)
    if len(set(names)) != len(names):
        raise ValidationError("tensor names must be unique")
    if len(names) > 0xFFFF:
        raise ValidationError("too many tensors for the container header")
    chunks = [MAGIC, struct.pack("<HH", FORMAT_VERSION, len(names))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        dtype = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
        if dtype not in _DTYPE_CODES:
            raise ValidationError(
                f"tensor {name!r} has unsupported dtype {arr.dtype}; "
                "use float32, float64 or uint8"
            )
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise ValidationError(f"tensor name too long: {name!r}")
        if arr.ndim > 0xFF:
            raise ValidationError(f"tensor rank {arr.ndim} too large")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<BB", _DTYPE_CODES[dtype], arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(np.ascontiguousarray(arr, dtype=dtype).tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_tensors(path) -> dict:
    """Read a container back into an ordered name -> array dict."""
    data = Path(path).read_bytes()
    if len(data) < 8 or data[:4] != MAGIC:
        raise ValidationError(f"{path}: not a tensor container (bad magic)")
    version, count = struct.unpack_from("<HH", data, 4)
    if version != FORMAT_VERSION:
        raise ValidationError(f"{path}: unsupported container version {version}")
    offset = 8
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        name = data[offset : offset + name_len].decode("utf-8")
        offset += name_len
        code, rank = struct.unpack_from("<BB", data, offset)
        offset += 2
        if code not in _CODE_DTYPES:
            raise ValidationError(f"{path}: unknown dtype code {code} for tensor {name!r}")
        dims = struct.unpack_from(f"<{rank}I", data, offset)
        offset += 4 * rank
        dtype = _CODE_DTYPES[code]
        n_bytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize if rank else dtype.itemsize
        payload = data[offset : offset + n_bytes]
        if len(payload) != n_bytes:
            raise ValidationError(f"{path}: truncated payload for tensor {name!r}")
        offset += n_bytes
        if name in out:
            raise ValidationError(f"{path}: duplicate tensor name {name!r}")
        out[name] = np.frombuffer(payload, dtype=dtype).reshape(dims).copy()
    if offset != len(data):
        raise ValidationError(f"{path}: {len(data) - offset} trailing bytes after last tensor")
    return out
