"""Binary parameter container: named tensors, shape header, raw LE float32.

Layout: magic ``NTCK`` | uint32 version | uint32 header length | UTF-8 JSON
header | tensor payloads in header order.  The header carries the format
version, arbitrary metadata, and per-tensor name/shape entries.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import ContractError

MAGIC = b"NTCK"
VERSION = 1


def save_checkpoint(path: str | Path, arrays: dict[str, np.ndarray],
                    meta: dict | None = None) -> None:
    header = {
        "version": VERSION,
        "meta": meta or {},
        "tensors": [
            {"name": name, "shape": list(a.shape)} for name, a in arrays.items()
        ],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(blob)))
        f.write(blob)
        for a in arrays.values():
            f.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise ContractError(f"{path}: not a parameter container")
        version, header_len = struct.unpack("<II", f.read(8))
        if version != VERSION:
            raise ContractError(f"{path}: unsupported container version {version}")
        header = json.loads(f.read(header_len).decode())
        arrays: dict[str, np.ndarray] = {}
        for entry in header["tensors"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            raw = f.read(4 * count)
            if len(raw) != 4 * count:
                raise ContractError(f"{path}: truncated tensor {entry['name']!r}")
            arrays[entry["name"]] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    return arrays, header.get("meta", {})
