import json
import struct

import numpy as np
import pytest

from checkpoint import load_checkpoint, save_checkpoint
from errors import DatasetFormatError


def test_checkpoint_round_trip(tmp_path):
    tensors = {"layer1.weight": np.arange(6, dtype=np.float32).reshape(2, 3), "in.bias": np.array([0.5, -1.0])}
    path = save_checkpoint(tmp_path / "ckpt" / "stage0.ckpt", tensors, {"stage": 0})
    loaded = load_checkpoint(path)
    assert sorted(loaded) == ["in.bias", "layer1.weight"]
    np.testing.assert_array_equal(loaded["layer1.weight"], tensors["layer1.weight"])
    assert loaded["in.bias"].dtype == np.float32


def test_checkpoint_header_layout(tmp_path):
    path = save_checkpoint(tmp_path / "a.ckpt", {"w": np.ones((2, 2))})
    raw = path.read_bytes()
    (length,) = struct.unpack("<Q", raw[:8])
    header = json.loads(raw[8:8 + length])
    assert header["tensors"] == [{"name": "w", "shape": [2, 2], "offset": 0, "count": 4}]
    assert len(raw) == 8 + length + 16


def test_truncated_checkpoint_is_rejected(tmp_path):
    path = save_checkpoint(tmp_path / "a.ckpt", {"w": np.ones(8)})
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(DatasetFormatError):
        load_checkpoint(path)
    path.write_bytes(b"\x01")
    with pytest.raises(DatasetFormatError):
        load_checkpoint(path)
