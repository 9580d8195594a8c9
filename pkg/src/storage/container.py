"""
Little-endian binary container shared by datasets, checkpoints and probes.

Every file opens with the common prefix

    magic    4 bytes  b"DCVL"
    version  u32      1
    kind     u32      1 = dataset, 2 = tensor archive

A tensor archive continues with

    index_len  u32
    index      index_len bytes of UTF-8 JSON
               {"tensors": {name: {"shape": [...], "offset": int}}, "meta": {...}}
    payload    float64 values; offsets are byte offsets into the payload

The dataset layout is documented in src/world/dataset.py.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

from src.errors import FormatError

MAGIC = b"DCVL"
VERSION = 1
KIND_DATASET = 1
KIND_TENSORS = 2

PREFIX = struct.Struct("<4sII")


class BinaryWriter:
    """Append-only little-endian byte builder."""

    def __init__(self) -> None:
        self._buf = bytearray()

    def __len__(self) -> int:
        return len(self._buf)

    def pack(self, fmt: str, *values: Any) -> None:
        self._buf += struct.pack(fmt, *values)

    def prefix(self, kind: int) -> None:
        self._buf += PREFIX.pack(MAGIC, VERSION, kind)

    def array(self, values: np.ndarray, dtype: str) -> None:
        self._buf += np.ascontiguousarray(values, dtype=np.dtype(dtype)).tobytes()

    def raw(self, data: bytes) -> None:
        self._buf += data

    def getvalue(self) -> bytes:
        return bytes(self._buf)

    def write_to(self, path: str | Path) -> None:
        Path(path).write_bytes(self._buf)


class BinaryReader:
    """Cursor over a byte buffer; every read failure reports its byte offset."""

    def __init__(self, data: bytes) -> None:
        self._data = memoryview(data)
        self.offset = 0

    @classmethod
    def open(cls, path: str | Path) -> "BinaryReader":
        return cls(Path(path).read_bytes())

    @property
    def remaining(self) -> int:
        return len(self._data) - self.offset

    def _take(self, n: int, what: str) -> memoryview:
        if n < 0 or self.remaining < n:
            raise FormatError(f"Truncated file while reading {what}: need {n} bytes, {self.remaining} left",
                              self.offset)
        chunk = self._data[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, fmt: str, what: str = "record") -> tuple:
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self._take(size, what))

    def prefix(self, expected_kind: int) -> None:
        start = self.offset
        magic, version, kind = self.unpack(PREFIX.format, "header")
        if magic != MAGIC:
            raise FormatError(f"Bad magic {bytes(magic)!r}, expected {MAGIC!r}", start)
        if version != VERSION:
            raise FormatError(f"Unsupported version {version}, expected {VERSION}", start + 4)
        if kind != expected_kind:
            raise FormatError(f"File kind {kind} does not match expected kind {expected_kind}", start + 8)

    def array(self, count: int, dtype: str, what: str = "array") -> np.ndarray:
        dt = np.dtype(dtype)
        chunk = self._take(count * dt.itemsize, what)
        return np.frombuffer(chunk, dtype=dt, count=count).copy()

    def raw(self, n: int, what: str = "bytes") -> bytes:
        return bytes(self._take(n, what))

    def expect_end(self) -> None:
        if self.remaining:
            raise FormatError(f"{self.remaining} unexpected trailing bytes", self.offset)


# ──────────────────────────────────────────────
# Tensor archives
# ──────────────────────────────────────────────


def write_tensor_archive(path: str | Path, tensors: dict[str, np.ndarray], meta: dict[str, Any] | None = None) -> None:
    """Write named float64 tensors plus JSON metadata."""
    index: dict[str, dict[str, Any]] = {}
    offset = 0
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype=np.float64)
        index[name] = {"shape": list(arr.shape), "offset": offset}
        offset += arr.size * 8
    header = json.dumps({"tensors": index, "meta": meta or {}}, sort_keys=True).encode("utf-8")

    w = BinaryWriter()
    w.prefix(KIND_TENSORS)
    w.pack("<I", len(header))
    w.raw(header)
    for arr in tensors.values():
        w.array(np.asarray(arr, dtype=np.float64).reshape(-1), "<f8")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    w.write_to(path)


def read_tensor_archive(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    r = BinaryReader.open(path)
    r.prefix(KIND_TENSORS)
    (index_len,) = r.unpack("<I", "index length")
    index_at = r.offset
    try:
        index = json.loads(r.raw(index_len, "index").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"Corrupt tensor index: {e}", index_at) from e
    payload_at = r.offset
    tensors: dict[str, np.ndarray] = {}
    entries = sorted(index["tensors"].items(), key=lambda item: item[1]["offset"])
    for name, entry in entries:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        if r.offset != payload_at + entry["offset"]:
            raise FormatError(f"Tensor '{name}' offset {entry['offset']} is out of sequence", r.offset)
        tensors[name] = r.array(count, "<f8", f"tensor '{name}'").reshape(shape)
    r.expect_end()
    return tensors, index.get("meta", {})
