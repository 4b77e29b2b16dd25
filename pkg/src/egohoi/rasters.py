"""Binary PPM (P6) / PGM (P5) I/O for images and masks, maxval 255."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import SchemaError


def _read_netpbm(path, magic: bytes):
    data = Path(path).read_bytes()
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise SchemaError(f"{path}: truncated header")
        fields.append(data[start:pos])
    pos += 1  # single whitespace byte before the raster
    if fields[0] != magic:
        raise SchemaError(f"{path}: expected {magic.decode()} got {fields[0][:2]!r}")
    try:
        w, h, maxval = (int(f) for f in fields[1:])
    except ValueError as exc:
        raise SchemaError(f"{path}: bad header ({exc})") from None
    if maxval != 255:
        raise SchemaError(f"{path}: only maxval 255 is supported")
    return w, h, data[pos:]


def read_ppm(path) -> np.ndarray:
    """RGB image as ``(H, W, 3)`` uint8."""
    w, h, raw = _read_netpbm(path, b"P6")
    if len(raw) < 3 * w * h:
        raise SchemaError(f"{path}: raster shorter than {w}x{h}x3")
    return np.frombuffer(raw[:3 * w * h], dtype=np.uint8).reshape(h, w, 3).copy()


def write_ppm(path, img: np.ndarray) -> None:
    img = np.ascontiguousarray(img, dtype=np.uint8)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("PPM needs an (H, W, 3) image")
    h, w = img.shape[:2]
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + img.tobytes())


def read_pgm_raw(path) -> np.ndarray:
    w, h, raw = _read_netpbm(path, b"P5")
    if len(raw) < w * h:
        raise SchemaError(f"{path}: raster shorter than {w}x{h}")
    return np.frombuffer(raw[:w * h], dtype=np.uint8).reshape(h, w).copy()


def write_pgm_raw(path, gray: np.ndarray) -> None:
    gray = np.ascontiguousarray(gray, dtype=np.uint8)
    if gray.ndim != 2:
        raise ValueError("PGM needs an (H, W) raster")
    h, w = gray.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + gray.tobytes())


def read_pgm(path) -> np.ndarray:
    """Binary mask: 1 where the stored gray level is >= 128."""
    return (read_pgm_raw(path) >= 128).astype(np.uint8)


def write_pgm(path, mask: np.ndarray) -> None:
    """Binary mask stored as 0 / 255."""
    write_pgm_raw(path, np.where(np.asarray(mask) != 0, 255, 0).astype(np.uint8))
