"""Flat-array checkpoint container.

Layout: 8-byte magic, uint32 little-endian header length, UTF-8 JSON header,
then every array as contiguous little-endian float64 in header order.
"""
from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

MAGIC = b"GPLCKPT1"


class CheckpointError(ValueError):
    pass


def write_atomic(path: Path, data: bytes | str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    if isinstance(data, str):
        tmp.write_text(data)
    else:
        tmp.write_bytes(data)
    os.replace(tmp, path)


def dumps(meta: dict, arrays: dict[str, np.ndarray]) -> bytes:
    names = list(arrays)
    header = dict(meta)
    header["arrays"] = [{"name": n, "shape": list(np.shape(arrays[n]))} for n in names]
    hdr = json.dumps(header, sort_keys=True).encode()
    body = b"".join(np.ascontiguousarray(arrays[n], dtype="<f8").tobytes() for n in names)
    return MAGIC + struct.pack("<I", len(hdr)) + hdr + body


def loads(blob: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if blob[:8] != MAGIC:
        raise CheckpointError("not a checkpoint file")
    (n,) = struct.unpack("<I", blob[8:12])
    header = json.loads(blob[12 : 12 + n].decode())
    arrays = {}
    off = 12 + n
    for spec in header.pop("arrays"):
        count = int(np.prod(spec["shape"], dtype=np.int64))
        end = off + 8 * count
        if end > len(blob):
            raise CheckpointError(f"truncated array {spec['name']}")
        arrays[spec["name"]] = np.frombuffer(blob[off:end], dtype="<f8").reshape(spec["shape"]).astype(float)
        off = end
    if off != len(blob):
        raise CheckpointError("trailing bytes after last array")
    return header, arrays


def save(path: Path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    write_atomic(path, dumps(meta, arrays))


def load(path: Path) -> tuple[dict, dict[str, np.ndarray]]:
    return loads(Path(path).read_bytes())
