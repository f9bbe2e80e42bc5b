import json
import struct

import numpy as np
import pytest

from datlab import tasks
from datlab.checkpoint import (
    CheckpointError, checkpoint_hash, load_checkpoint, save_checkpoint,
)
from datlab.models import ModelSpec, build
from datlab.rng import Rng


def test_container_layout(tmp_path):
    path = tmp_path / "x.ckpt"
    params = {"b": np.arange(6, dtype=np.float32).reshape(2, 3),
              "a": np.float32([1.5])}
    save_checkpoint(path, params, spec_dict={"arch": "lstm"})
    raw = path.read_bytes()
    (hlen,) = struct.unpack("<Q", raw[:8])
    header = json.loads(raw[8:8 + hlen])
    assert header["format"] == "datlab-checkpoint/1"
    assert header["spec"] == {"arch": "lstm"}
    assert header["tensors"]["a"] == {"shape": [1], "offset": 0, "dtype": "f32"}
    assert header["tensors"]["b"]["offset"] == 4  # sorted name order
    payload = raw[8 + hlen:]
    assert np.frombuffer(payload[:4], dtype="<f4")[0] == 1.5


def test_roundtrip_bit_identical(tmp_path):
    path = tmp_path / "m.ckpt"
    rng = np.random.default_rng(0)
    params = {f"p{i}": rng.normal(size=(3, i + 1)).astype(np.float32) for i in range(4)}
    save_checkpoint(path, params)
    _, loaded = load_checkpoint(path)
    assert set(loaded) == set(params)
    for name in params:
        assert np.array_equal(loaded[name], params[name])


def test_deterministic_bytes(tmp_path):
    params = {"w": np.ones((4, 4), dtype=np.float32), "b": np.zeros(4, dtype=np.float32)}
    p1, p2 = tmp_path / "1.ckpt", tmp_path / "2.ckpt"
    save_checkpoint(p1, params, spec_dict={"arch": "lstm"})
    save_checkpoint(p2, params, spec_dict={"arch": "lstm"})
    assert checkpoint_hash(p1) == checkpoint_hash(p2)


def test_model_roundtrip_identical_logits(tmp_path):
    spec = ModelSpec(arch="sandwich", d_model=16, n_heads=2, n_blocks=2)
    model = build(spec, Rng(3))
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, model.state_arrays(), spec_dict=spec.to_dict())
    header, params = load_checkpoint(path)
    clone = build(ModelSpec.from_dict(header["spec"]), Rng(999))
    clone.load_state(params)
    batch = tasks.make_batch("combined", 4, 3, Rng(5))
    assert np.array_equal(model.forward(batch.tokens).data,
                          clone.forward(batch.tokens).data)


def test_corrupt_containers_raise(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"\x01\x02")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
    path.write_bytes(struct.pack("<Q", 10 ** 6) + b"{}")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)
    header = json.dumps({"format": "datlab-checkpoint/1",
                         "tensors": {"w": {"shape": [4], "offset": 0, "dtype": "f32"}}}).encode()
    path.write_bytes(struct.pack("<Q", len(header)) + header + b"\x00" * 8)
    with pytest.raises(CheckpointError):  # payload too short for 4 floats
        load_checkpoint(path)


def test_load_state_validates_names_and_shapes():
    model = build(ModelSpec(arch="lstm", d_model=16, n_heads=2), Rng(0))
    state = model.state_arrays()
    bad = dict(state)
    bad.pop("head.bias")
    with pytest.raises(ValueError):
        model.load_state(bad)
    bad = dict(state)
    bad["head.bias"] = np.zeros(7, dtype=np.float32)
    with pytest.raises(ValueError):
        model.load_state(bad)
