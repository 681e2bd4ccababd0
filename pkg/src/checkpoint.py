"""
Stage checkpoints: an 8-byte little-endian header length, a JSON header
describing every tensor, then the tensors as little-endian f32, row-major.
"""
import json
import struct
from pathlib import Path
from typing import Dict

import numpy as np

from config import ensure_dir
from errors import DatasetFormatError

FORMAT_VERSION = 1


def save_checkpoint(path, tensors: Dict[str, np.ndarray], meta: Dict = None) -> Path:
    path = Path(path)
    ensure_dir(path.parent)
    entries, offset = [], 0
    for name in sorted(tensors):
        size = int(np.asarray(tensors[name]).size)
        entries.append({"name": name, "shape": list(np.shape(tensors[name])), "offset": offset, "count": size})
        offset += size * 4
    header = json.dumps({"version": FORMAT_VERSION, "dtype": "<f4", "tensors": entries,
                         "meta": meta or {}}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for name in sorted(tensors):
            f.write(np.ascontiguousarray(tensors[name], dtype="<f4").tobytes())
    return path


def load_checkpoint(path) -> Dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise DatasetFormatError(f"{path}: truncated checkpoint")
    (length,) = struct.unpack("<Q", raw[:8])
    header = json.loads(raw[8:8 + length].decode("utf-8"))
    body = raw[8 + length:]
    tensors = {}
    for entry in header["tensors"]:
        end = entry["offset"] + entry["count"] * 4
        if end > len(body):
            raise DatasetFormatError(f"{path}: tensor {entry['name']} runs past end of file")
        data = np.frombuffer(body[entry["offset"]:end], dtype="<f4")
        tensors[entry["name"]] = data.reshape(entry["shape"]).astype(np.float32)
    return tensors
