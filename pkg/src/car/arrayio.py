"""Little-endian binary array files and text manifests.

One array per file: magic "CARD", format version u32, dim count u32, one
u32 extent per dim, then the float64 payload row-major. A manifest is a
plain text file with one `name role filename` line per array.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"CARD"
VERSION = 1


class FormatError(ValueError):
    pass


def array_bytes(arr):
    # tobytes() already emits C order; avoid ascontiguousarray, which
    # promotes 0-d arrays to shape (1,)
    arr = np.asarray(arr, dtype="<f8")
    header = MAGIC + struct.pack("<II", VERSION, arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.tobytes()


def array_from_bytes(buf):
    if len(buf) < 12 or buf[:4] != MAGIC:
        raise FormatError("not an array file (bad magic)")
    version, ndim = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise FormatError(f"unsupported array format version {version}")
    offset = 12
    if len(buf) < offset + 4 * ndim:
        raise FormatError("truncated array header")
    shape = struct.unpack_from(f"<{ndim}I", buf, offset)
    offset += 4 * ndim
    count = int(np.prod(shape)) if ndim else 1
    payload = buf[offset:]
    if len(payload) != 8 * count:
        raise FormatError(
            f"payload size {len(payload)} != expected {8 * count} for shape {shape}")
    return np.frombuffer(payload, dtype="<f8").reshape(shape).copy()


def save_array(path, arr):
    Path(path).write_bytes(array_bytes(arr))


def load_array(path):
    return array_from_bytes(Path(path).read_bytes())


def write_manifest(path, entries):
    """entries: iterable of (name, role, filename)."""
    lines = [f"{name} {role} {filename}" for name, role, filename in entries]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path):
    entries = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise FormatError(f"bad manifest line: {line!r}")
        entries.append(tuple(parts))
    return entries
