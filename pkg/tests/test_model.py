import numpy as np
import pytest

from ctrlfuse.backbone import BackboneConfig
from ctrlfuse.model import AblationFlags, CtrlFuse, ModelConfig
from ctrlfuse.tensor import ShapeError, Tensor

TINY = ModelConfig(
    backbone=BackboneConfig(enc_channels=4, grdb_blocks=1,
                            decoder_schedule=(8, 4, 2, 1), seed=11),
    d_backend=8, n_queries=5, seed=11,
)


def _inputs(seed=0, size=16):
    rng = np.random.default_rng(seed)
    ir = Tensor(rng.uniform(0.1, 0.9, (1, size, size)))
    vis = Tensor(rng.uniform(0.1, 0.9, (3, size, size)))
    mask = Tensor((rng.random((size, size)) > 0.5).astype(float))
    return ir, vis, mask


def _tiny(**ablation):
    cfg = ModelConfig(backbone=TINY.backbone, d_backend=8, n_queries=5,
                      seed=11, ablation=AblationFlags(**ablation))
    return CtrlFuse(cfg)


def test_ablation_flags_from_names():
    flags = AblationFlags.from_names(["no_seg", "exchange_sq"])
    assert flags.no_seg and flags.exchange_sq
    assert not flags.no_prompt
    with pytest.raises(ValueError):
        AblationFlags.from_names(["bogus"])


def test_config_roundtrip():
    cfg = ModelConfig(ablation=AblationFlags(no_vis=True))
    back = ModelConfig.from_dict(cfg.as_dict())
    assert back.as_dict() == cfg.as_dict()


def test_forward_shapes():
    model = _tiny()
    ir, vis, mask = _inputs()
    out = model(ir, vis, mask, alpha=1.0)
    assert out.i_ref.shape == (1, 16, 16)
    assert out.i_fused.shape == (1, 16, 16)
    assert out.m_ir.shape == (16, 16)
    assert out.m_vis.shape == (16, 16)
    assert out.i_seg.shape == (16, 16)
    assert out.f_ref.shape == (8, 16, 16)
    assert out.f_final.shape == (8, 16, 16)
    assert out.i_fused.data.min() >= 0.0 and out.i_fused.data.max() <= 1.0


def test_input_validation():
    model = _tiny()
    with pytest.raises(ShapeError):
        model(Tensor(np.zeros((3, 16, 16))), Tensor(np.zeros((3, 16, 16))), None)
    with pytest.raises(ShapeError):
        model(Tensor(np.zeros((1, 16, 16))), Tensor(np.zeros((1, 16, 16))), None)
    with pytest.raises(ShapeError):
        model(Tensor(np.zeros((1, 16, 16))), Tensor(np.zeros((3, 8, 8))), None)


def test_no_mask_is_reference_path():
    model = _tiny()
    ir, vis, _ = _inputs()
    out = model(ir, vis, None)
    assert out.i_fused is out.i_ref
    assert out.m_ir is None and out.m_vis is None and out.i_seg is None


def test_alpha_zero_is_reference_bit_exact():
    model = _tiny()
    ir, vis, mask = _inputs()
    out = model(ir, vis, mask, alpha=0.0)
    assert np.array_equal(out.i_fused.data, out.i_ref.data)
    assert out.f_final is out.f_ref


def test_alpha_changes_output_with_mask():
    model = _tiny()
    ir, vis, mask = _inputs()
    a0 = model(ir, vis, mask, alpha=0.0)
    a1 = model(ir, vis, mask, alpha=1.0)
    a5 = model(ir, vis, mask, alpha=5.0)
    assert np.max(np.abs(a1.i_fused.data - a0.i_fused.data)) > 0.0
    assert np.max(np.abs(a5.i_fused.data - a1.i_fused.data)) > 0.0


def test_forward_deterministic():
    model = _tiny()
    ir, vis, mask = _inputs()
    a = model(ir, vis, mask)
    b = model(Tensor(ir.data.copy()), Tensor(vis.data.copy()),
              Tensor(mask.data.copy()))
    assert np.array_equal(a.i_fused.data, b.i_fused.data)
    assert np.array_equal(a.i_seg.data, b.i_seg.data)


def test_no_prompt_ablation():
    model = _tiny(no_prompt=True)
    ir, vis, mask = _inputs()
    out = model(ir, vis, mask, alpha=1.0)
    assert out.i_fused is out.i_ref
    assert out.i_seg is None
    _, bd = model.loss(ir, vis, mask, mask)
    assert bd.bce == 0.0 and bd.dice == 0.0


def test_no_seg_ablation():
    model = _tiny(no_seg=True)
    ir, vis, mask = _inputs()
    out = model(ir, vis, mask, alpha=1.0)
    assert out.i_seg is None and out.m_ir is None and out.m_vis is None
    _, bd = model.loss(ir, vis, mask, mask)
    assert bd.bce == 0.0 and bd.dice == 0.0


def test_no_vis_and_no_ir_ablations():
    ir, vis, mask = _inputs()
    out_nv = _tiny(no_vis=True)(ir, vis, mask)
    assert out_nv.m_vis is None and out_nv.m_ir is not None
    assert np.array_equal(out_nv.i_seg.data, out_nv.m_ir.data)
    out_ni = _tiny(no_ir=True)(ir, vis, mask)
    assert out_ni.m_ir is None and out_ni.m_vis is not None
    assert np.array_equal(out_ni.i_seg.data, out_ni.m_vis.data)


def test_each_ablation_differs_from_full_model():
    ir, vis, mask = _inputs(seed=4)
    full = _tiny()(ir, vis, mask, alpha=1.0).i_fused.data
    for flag in ("no_prompt", "no_seg", "no_vis", "no_ir", "exchange_sq"):
        out = _tiny(**{flag: True})(ir, vis, mask, alpha=1.0).i_fused.data
        assert np.max(np.abs(out - full)) > 0.0, flag


def test_frozen_checksum_stable_across_instances():
    assert _tiny().frozen_checksum() == _tiny().frozen_checksum()


def test_loss_runs_and_breaks_down():
    model = _tiny()
    ir, vis, mask = _inputs(seed=5)
    loss, bd = model.loss(ir, vis, mask, mask)
    assert loss.size == 1
    parts = bd.pixel + bd.grad + bd.int + bd.percep + bd.bce + bd.dice
    assert abs(loss.item() - parts) < 1e-9
    loss.backward()
    # every trainable parameter is reachable from the objective
    dead = [k for k, p in model.trainable_params().items() if p.grad is None]
    assert dead == []
