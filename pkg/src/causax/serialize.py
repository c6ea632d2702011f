"""Flat binary weight serialization.

Layout per tensor, all little-endian: name length (u32), name bytes
(utf-8), rank (u32), extents (u64 each), dtype tag (u8: 1 = float32,
2 = float64), then the row-major payload. A sibling manifest file lists
the tensor names in file order so readers can detect truncation or
reordering without scanning blindly.
"""

from __future__ import annotations

import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

_DTYPE_TAGS = {1: np.dtype("<f4"), 2: np.dtype("<f8")}
_TAG_FOR = {"f32": 1, "f64": 2}


class SerializationError(IOError):
    """Corrupt, truncated, or inconsistent weight file."""


def save_tensors(bin_path, manifest_path, tensors, dtype: str = "f32") -> None:
    """Write an ordered ``{name: ndarray}`` mapping to ``bin_path``.

    ``dtype`` selects the storage precision; checkpoints default to f32.
    """
    tag = _TAG_FOR[dtype]
    store = _DTYPE_TAGS[tag]
    names = []
    with open(bin_path, "wb") as f:
        for name, arr in tensors.items():
            arr = np.ascontiguousarray(arr)
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", arr.ndim))
            for extent in arr.shape:
                f.write(struct.pack("<Q", extent))
            f.write(struct.pack("<B", tag))
            f.write(arr.astype(store).tobytes(order="C"))
            names.append(name)
    Path(manifest_path).write_text("".join(n + "\n" for n in names))


def load_tensors(bin_path, manifest_path) -> "OrderedDict[str, np.ndarray]":
    """Read tensors back (as float64) and verify them against the manifest."""
    manifest = [line for line in Path(manifest_path).read_text().splitlines() if line]
    blob = Path(bin_path).read_bytes()
    out: "OrderedDict[str, np.ndarray]" = OrderedDict()
    pos = 0

    def need(k: int) -> bytes:
        nonlocal pos
        if pos + k > len(blob):
            raise SerializationError(f"{bin_path}: truncated at byte {pos} (needed {k} more)")
        chunk = blob[pos:pos + k]
        pos += k
        return chunk

    for expected in manifest:
        (name_len,) = struct.unpack("<I", need(4))
        name = need(name_len).decode("utf-8")
        if name != expected:
            raise SerializationError(
                f"{bin_path}: tensor order mismatch, manifest says {expected!r} but file has {name!r}"
            )
        (rank,) = struct.unpack("<I", need(4))
        shape = tuple(struct.unpack("<Q", need(8))[0] for _ in range(rank))
        (tag,) = struct.unpack("<B", need(1))
        if tag not in _DTYPE_TAGS:
            raise SerializationError(f"{bin_path}: unknown dtype tag {tag} for tensor {name!r}")
        store = _DTYPE_TAGS[tag]
        count = int(np.prod(shape)) if shape else 1
        payload = need(count * store.itemsize)
        arr = np.frombuffer(payload, dtype=store).reshape(shape).astype(np.float64)
        out[name] = arr
    if pos != len(blob):
        raise SerializationError(f"{bin_path}: {len(blob) - pos} trailing bytes not covered by manifest")
    return out
