"""Binary netpbm I/O: P6 (RGB) and P5 (grayscale), maxval 255 only.

The formats are deliberately minimal so round trips are bit-exact with no
image library in the loop. Parse errors carry the byte offset at which the
file stopped making sense.
"""

from __future__ import annotations

import numpy as np


class NetpbmError(Exception):
    pass


def _parse_header(raw: bytes, magic: bytes, path) -> tuple[int, int, int]:
    """Returns (width, height, payload_offset)."""
    if raw[:2] != magic:
        raise NetpbmError(f"{path}: expected magic {magic.decode()} at byte 0, got {raw[:2]!r}")
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        token = raw[start:pos]
        if not token.isdigit():
            raise NetpbmError(f"{path}: malformed header token {token!r} at byte {start}")
        fields.append(int(token))
    if pos >= len(raw) or not raw[pos:pos + 1].isspace():
        raise NetpbmError(f"{path}: missing whitespace after header at byte {pos}")
    pos += 1
    width, height, maxval = fields
    if maxval != 255:
        raise NetpbmError(f"{path}: only maxval 255 supported, got {maxval}")
    if width <= 0 or height <= 0:
        raise NetpbmError(f"{path}: bad dimensions {width}x{height}")
    return width, height, pos


def _read(path, magic, channels):
    with open(path, "rb") as f:
        raw = f.read()
    width, height, offset = _parse_header(raw, magic, path)
    expected = width * height * channels
    actual = len(raw) - offset
    if actual < expected:
        raise NetpbmError(f"{path}: truncated payload, expected {expected} bytes, got {actual}")
    if actual > expected:
        raise NetpbmError(f"{path}: {actual - expected} trailing bytes after payload")
    data = np.frombuffer(raw, dtype=np.uint8, count=expected, offset=offset)
    if channels == 1:
        return data.reshape(height, width).copy()
    return data.reshape(height, width, channels).copy()


def read_ppm(path) -> np.ndarray:
    """[H,W,3] uint8."""
    return _read(path, b"P6", 3)


def read_pgm(path) -> np.ndarray:
    """[H,W] uint8."""
    return _read(path, b"P5", 1)


def _write(path, magic, img):
    arr = np.ascontiguousarray(img, dtype=np.uint8)
    h, w = arr.shape[:2]
    with open(path, "wb") as f:
        f.write(magic + b"\n%d %d\n255\n" % (w, h))
        f.write(arr.tobytes())


def write_ppm(path, img):
    if img.ndim != 3 or img.shape[2] != 3:
        raise NetpbmError(f"write_ppm needs [H,W,3], got {img.shape}")
    _write(path, b"P6", img)


def write_pgm(path, img):
    if img.ndim != 2:
        raise NetpbmError(f"write_pgm needs [H,W], got {img.shape}")
    _write(path, b"P5", img)
