"""Versioned binary checkpoint: a key -> (shape, float64 values) map.

Layout: 8-byte magic carrying the version, a u64 little-endian JSON header
length, the UTF-8 JSON header (metadata dict plus the array directory in
order), then the raw little-endian float64 payloads back to back. Write
followed by read is bit-exact.
"""

from __future__ import annotations

import json
import numpy as np

MAGIC = b"WSEGCK01"


class CheckpointError(Exception):
    pass


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict | None = None):
    directory = []
    blobs = []
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype=np.float64)
        directory.append({"name": name, "shape": list(a.shape)})
        blobs.append(a.tobytes())
    header = json.dumps({"meta": meta or {}, "arrays": directory}).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(len(header).to_bytes(8, "little"))
        f.write(header)
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < len(MAGIC) + 8 or raw[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic {raw[:8]!r})")
    hlen = int.from_bytes(raw[8:16], "little")
    if len(raw) < 16 + hlen:
        raise CheckpointError(f"{path}: truncated header, expected {hlen} bytes, have {len(raw) - 16}")
    try:
        header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupt header ({e})") from e
    offset = 16 + hlen
    arrays = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8
        if offset + nbytes > len(raw):
            raise CheckpointError(f"{path}: truncated payload for {entry['name']!r}, "
                                  f"expected {nbytes} bytes at offset {offset}, "
                                  f"have {len(raw) - offset}")
        arrays[entry["name"]] = np.frombuffer(raw[offset:offset + nbytes], dtype="<f8").reshape(shape).copy()
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes after payload")
    return arrays, header["meta"]
