"""Dense Tensor File: a tiny binary container for float64 arrays.

Layout: magic "DRTF", version u32 LE, header-length u32 LE, UTF-8 JSON
header {"dtype": "f64", "shape": [...], "order": "row-major"}, then the
raw little-endian payload. Writing and reading round-trip bit-exactly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"DRTF"
VERSION = 1


def write_dtf(path, array: np.ndarray) -> None:
    arr = np.ascontiguousarray(array, dtype=np.float64)
    header = json.dumps(
        {"dtype": "f64", "shape": list(arr.shape), "order": "row-major"},
        separators=(",", ":"),
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header)))
        fh.write(header)
        fh.write(arr.astype("<f8").tobytes())


def read_dtf(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: not a DTF file")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != VERSION:
        raise ValueError(f"{path}: unsupported DTF version {version}")
    header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    if header.get("dtype") != "f64" or header.get("order") != "row-major":
        raise ValueError(f"{path}: unsupported layout {header}")
    shape = tuple(int(s) for s in header["shape"])
    payload = raw[12 + hlen:]
    expected = int(np.prod(shape)) * 8 if shape else 8
    if len(payload) != expected:
        raise ValueError(f"{path}: payload length {len(payload)} != {expected}")
    return np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(shape)
