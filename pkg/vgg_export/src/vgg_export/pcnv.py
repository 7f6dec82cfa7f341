"""Minimal PCNV writer.

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
Entries are written in mapping order, so the same mapping always yields
the same bytes.
"""

import struct

import numpy as np

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
