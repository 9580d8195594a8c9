"""Binary PGM (P5, 8-bit) export for depth maps."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from src.errors import FormatError


def to_gray8(image: np.ndarray) -> np.ndarray:
    """[0, 1] floats -> uint8 with round-half-up."""
    return np.floor(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_pgm(path: str | Path, image: np.ndarray) -> None:
    gray = to_gray8(image)
    if gray.ndim != 2:
        raise FormatError(f"PGM needs a 2-D image, got shape {gray.shape}")
    h, w = gray.shape
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(f"P5\n{w} {h}\n255\n".encode("ascii") + gray.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    """Return the raw uint8 raster."""
    data = Path(path).read_bytes()
    fields: list[bytes] = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("Truncated PGM header", pos)
        fields.append(data[start:pos])
    if fields[0] != b"P5":
        raise FormatError(f"Not a binary PGM (magic {fields[0]!r})", 0)
    try:
        w, h, maxval = (int(f) for f in fields[1:])
    except ValueError as e:
        raise FormatError(f"Bad PGM header value: {e}", pos) from e
    if maxval != 255:
        raise FormatError(f"Only 8-bit PGM is supported (maxval {maxval})", pos)
    pos += 1  # single whitespace after maxval
    raster = data[pos:pos + w * h]
    if len(raster) != w * h:
        raise FormatError(f"PGM raster holds {len(raster)} bytes, expected {w * h}", pos)
    return np.frombuffer(raster, dtype=np.uint8).reshape(h, w).copy()
