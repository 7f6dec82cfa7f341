"""PCNV container: the portable tensor file used for checkpoints and
feature-extractor weights.

Layout (all integers little-endian):

    magic  b"PCNV"
    u32    version (currently 1)
    u32    entry count
    per entry:
        u32    name length
        bytes  UTF-8 name
        u8     rank
        u32[]  dims (rank of them)
        f32[]  payload, row-major

Payloads are always written as float32 regardless of in-memory dtype.
"""

from __future__ import annotations

import struct
from collections import OrderedDict

import numpy as np

from .errors import UserInputError

MAGIC = b"PCNV"
VERSION = 1


def write_pcnv(path, entries):
    """Write an ordered mapping of name -> ndarray to *path*."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(entries)))
        for name, arr in entries.items():
            arr = np.asarray(arr)
            payload = np.ascontiguousarray(arr, dtype="<f4")
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<I", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(payload.tobytes())


def read_pcnv(path):
    """Read a PCNV file into an ordered name -> float32 ndarray mapping."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise UserInputError(f"cannot read {path}: {exc}") from exc
    if blob[:4] != MAGIC:
        raise UserInputError(f"{path} is not a PCNV file (bad magic)")
    if len(blob) < 12:
        raise UserInputError(f"{path} is truncated")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise UserInputError(f"unsupported PCNV version {version}")
    offset = 12
    entries = OrderedDict()
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            name = blob[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<B", blob, offset)
            offset += 1
            dims = struct.unpack_from(f"<{rank}I", blob, offset)
            offset += 4 * rank
            size = int(np.prod(dims, dtype=np.int64)) if rank else 1
            arr = np.frombuffer(blob, dtype="<f4", count=size, offset=offset)
            offset += 4 * size
            if not np.all(np.isfinite(arr)):
                raise UserInputError(
                    f"{path} entry {name!r} contains non-finite values")
            entries[name] = arr.reshape(dims).copy()
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise UserInputError(f"{path} is truncated or corrupt: {exc}") from exc
    if offset != len(blob):
        raise UserInputError(f"{path} has {len(blob) - offset} trailing bytes")
    return entries
