import struct

import numpy as np
import pytest

from ctrlfuse.backbone import BackboneConfig
from ctrlfuse.checkpoint import (FormatError, VersionError, load_model,
                                 load_tensors, save_model, save_tensors)
from ctrlfuse.model import CtrlFuse, ModelConfig
from ctrlfuse.tensor import Tensor

TINY = ModelConfig(
    backbone=BackboneConfig(enc_channels=4, grdb_blocks=1,
                            decoder_schedule=(8, 4, 2, 1), seed=11),
    d_backend=8, n_queries=5, seed=11,
)

GOLDEN_PLAIN = bytes.fromhex(
    "4346434b010000000200000001006102020000000200000000008"
    "03f0000004000004040000080400100620101000000"
    "0000003f"
)


def _golden_tensors():
    return {"a": np.array([[1.0, 2.0], [3.0, 4.0]]), "b": np.array([0.5])}


def test_golden_bytes_exact(tmp_path):
    path = tmp_path / "g.cfck"
    save_tensors(path, _golden_tensors())
    assert path.read_bytes() == GOLDEN_PLAIN


def test_golden_bytes_independent_construction(tmp_path):
    # rebuild the expected layout with struct, sharing no writer code
    blob = b"CFCK" + struct.pack("<II", 1, 2)
    blob += struct.pack("<H", 1) + b"a" + struct.pack("<B", 2)
    blob += struct.pack("<II", 2, 2)
    blob += np.array([1, 2, 3, 4], dtype="<f4").tobytes()
    blob += struct.pack("<H", 1) + b"b" + struct.pack("<B", 1)
    blob += struct.pack("<I", 1)
    blob += np.array([0.5], dtype="<f4").tobytes()
    assert blob == GOLDEN_PLAIN
    path = tmp_path / "g.cfck"
    path.write_bytes(blob)
    tensors, config, rng = load_tensors(path)
    assert config is None and rng is None
    assert np.array_equal(tensors["a"], [[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(tensors["b"], [0.5])


def test_roundtrip_f32_exact(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {
        "x/w": rng.standard_normal((3, 2, 3, 3)),
        "x/b": rng.standard_normal(3),
        "scalarish": rng.standard_normal(()),
    }
    path = tmp_path / "r.cfck"
    save_tensors(path, tensors, config={"n": 5}, rng_state=[1, 2, 3])
    back, config, rng_state = load_tensors(path)
    assert config == {"n": 5}
    assert np.array_equal(rng_state, [1.0, 2.0, 3.0])
    for name, arr in tensors.items():
        assert back[name].shape == arr.shape
        assert np.array_equal(back[name], arr.astype(np.float32).astype(np.float64))


def test_truncated_file_raises(tmp_path):
    path = tmp_path / "t.cfck"
    save_tensors(path, _golden_tensors())
    raw = path.read_bytes()
    for cut in (2, 7, 12, 20, len(raw) - 1):
        path.write_bytes(raw[:cut])
        with pytest.raises(FormatError):
            load_tensors(path)


def test_trailing_garbage_raises(tmp_path):
    path = tmp_path / "t.cfck"
    save_tensors(path, _golden_tensors())
    path.write_bytes(path.read_bytes() + b"\x00")
    with pytest.raises(FormatError):
        load_tensors(path)


def test_bad_magic_raises(tmp_path):
    path = tmp_path / "t.cfck"
    save_tensors(path, _golden_tensors())
    raw = bytearray(path.read_bytes())
    raw[:4] = b"NOPE"
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        load_tensors(path)


def test_unknown_version_raises(tmp_path):
    path = tmp_path / "t.cfck"
    save_tensors(path, _golden_tensors())
    raw = bytearray(path.read_bytes())
    raw[4:8] = struct.pack("<I", 99)
    path.write_bytes(bytes(raw))
    with pytest.raises(VersionError):
        load_tensors(path)


def test_model_roundtrip_forward_within_f32_noise(tmp_path):
    model = CtrlFuse(TINY)
    rng = np.random.default_rng(1)
    ir = Tensor(rng.uniform(0.1, 0.9, (1, 16, 16)))
    vis = Tensor(rng.uniform(0.1, 0.9, (3, 16, 16)))
    mask = Tensor((rng.random((16, 16)) > 0.5).astype(float))
    before = model(ir, vis, mask, alpha=1.0)

    path = tmp_path / "m.cfck"
    save_model(path, model, rng_state=[11, 0])
    loaded, rng_state = load_model(path)
    assert np.array_equal(rng_state, [11.0, 0.0])
    assert loaded.config.as_dict() == model.config.as_dict()
    after = loaded(ir, vis, mask, alpha=1.0)
    assert np.max(np.abs(after.i_fused.data - before.i_fused.data)) <= 1e-6
    assert np.max(np.abs(after.i_seg.data - before.i_seg.data)) <= 1e-6


def test_model_roundtrip_tensors_f32_identical(tmp_path):
    model = CtrlFuse(TINY)
    path = tmp_path / "m.cfck"
    save_model(path, model)
    loaded, _ = load_model(path)
    orig = model.named_params()
    for name, p in loaded.named_params().items():
        assert np.array_equal(
            p.data, orig[name].data.astype(np.float32).astype(np.float64)
        ), name


def test_load_model_requires_config(tmp_path):
    path = tmp_path / "m.cfck"
    save_tensors(path, _golden_tensors())
    with pytest.raises(FormatError):
        load_model(path)


def test_load_model_rejects_unknown_or_misshaped(tmp_path):
    model = CtrlFuse(TINY)
    path = tmp_path / "m.cfck"

    tensors = {name: p.data for name, p in model.named_params().items()}
    tensors["not/a/param"] = np.zeros(3)
    save_tensors(path, tensors, config=model.config.as_dict())
    with pytest.raises(FormatError):
        load_model(path)

    tensors = {name: p.data for name, p in model.named_params().items()}
    first = next(iter(tensors))
    tensors[first] = np.zeros((1, 1))
    save_tensors(path, tensors, config=model.config.as_dict())
    with pytest.raises(FormatError):
        load_model(path)
