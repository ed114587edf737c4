"""Bit-exact binary checkpoint files for named float64 arrays.

Layout (all integers little-endian):

    bytes 0..7   magic ``NSDGPK01``
    u32          format version (1)
    u32          number of entries
    per entry:
        u16      name length, then that many UTF-8 bytes
        u8       ndim
        u32*ndim dims
        f64*prod little-endian array data, C order
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"NSDGPK01"
VERSION = 1


class CheckpointError(ValueError):
    """Corrupt or incompatible checkpoint file."""


def save_arrays(path, arrays: dict[str, np.ndarray]):
    path = Path(path)
    chunks = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float64)  # astype below yields a C-order copy
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<B", arr.ndim))
        chunks.append(struct.pack("<%dI" % arr.ndim, *arr.shape))
        chunks.append(arr.astype("<f8").tobytes())
    path.write_bytes(b"".join(chunks))


def load_arrays(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise CheckpointError("bad magic bytes in %s" % path)
    version, count = struct.unpack_from("<II", buf, 8)
    if version != VERSION:
        raise CheckpointError("unsupported checkpoint version %d" % version)
    off = 16
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, off)
        off += 2
        name = buf[off:off + nlen].decode("utf-8")
        off += nlen
        (ndim,) = struct.unpack_from("<B", buf, off)
        off += 1
        shape = struct.unpack_from("<%dI" % ndim, buf, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(buf, dtype="<f8", count=size, offset=off).reshape(shape)
        off += 8 * size
        out[name] = arr.astype(np.float64)  # own, writable copy
    if off != len(buf):
        raise CheckpointError("trailing bytes in %s" % path)
    return out
