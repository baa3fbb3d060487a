"""Flat binary tensor container used for checkpoints and feature dumps.

Byte layout (all integers little-endian, no alignment padding):

    magic     8 bytes   b"PSPOT001"
    count     uint32    number of entries
    entry, repeated `count` times:
        path_len  uint16
        path      path_len bytes of UTF-8 (e.g. "audio.block0.attn.wq")
        dtype     uint8   0 = float32, 1 = float64
        ndim      uint8
        dims      ndim x uint32
        payload   prod(dims) little-endian floats, C order

Entries are written in sorted path order, so a container built from the
same mapping twice is byte-identical.  The format is append-only frozen:
readers reject any other magic.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"PSPOT001"

_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODE_FOR = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


class ContainerError(ValueError):
    """Malformed or wrong-version tensor container."""


def save_tensors(path, mapping) -> None:
    """Write {path: ndarray} to `path`; float32/float64 arrays only."""
    items = sorted(mapping.items())
    chunks = [MAGIC, struct.pack("<I", len(items))]
    for name, arr in items:
        arr = np.asarray(arr)
        if arr.dtype not in _CODE_FOR:
            raise ContainerError(f"{name}: cannot store dtype {arr.dtype}")
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ContainerError(f"path too long: {name[:40]}...")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<BB", _CODE_FOR[arr.dtype], arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        chunks.append(np.ascontiguousarray(le).tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_tensors(path) -> dict[str, np.ndarray]:
    """Read a container back into {path: ndarray} in native byte order."""
    blob = Path(path).read_bytes()
    if blob[:8] != MAGIC:
        raise ContainerError(f"{path}: bad magic {blob[:8]!r}, "
                             f"expected {MAGIC!r}")
    off = 8
    (count,) = struct.unpack_from("<I", blob, off)
    off += 4
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (plen,) = struct.unpack_from("<H", blob, off)
        off += 2
        name = blob[off:off + plen].decode("utf-8")
        off += plen
        code, ndim = struct.unpack_from("<BB", blob, off)
        off += 2
        if code not in _DTYPE_CODES:
            raise ContainerError(f"{path}: unknown dtype code {code}")
        dims = struct.unpack_from(f"<{ndim}I", blob, off)
        off += 4 * ndim
        dt = _DTYPE_CODES[code]
        nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize if ndim else dt.itemsize
        arr = np.frombuffer(blob, dtype=dt, count=nbytes // dt.itemsize,
                            offset=off).reshape(dims)
        off += nbytes
        out[name] = arr.astype(arr.dtype.newbyteorder("="))
    if off != len(blob):
        raise ContainerError(f"{path}: {len(blob) - off} trailing bytes")
    return out
