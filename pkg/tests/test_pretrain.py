import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from pseudoscene import tensor as T
from pseudoscene.data import synthetic_shapes
from pseudoscene.geometry import TransformConfig
from pseudoscene.mhp import MHPConfig, MHPNet
from pseudoscene.mhv import MHVConfig, MHVNet
from pseudoscene.nn import Parameter
from pseudoscene.pretrain import (
    AdamWState,
    PPCConfig,
    TrainConfig,
    TrainingError,
    adamw_step,
    cosine_lr,
    ppc_loss,
    pretrain_run,
    steps_per_epoch,
    strict_mask,
)
from pseudoscene.tensor import Tensor

TINY_P = MHPConfig(widths=(4, 4, 8, 8), k=4, head_hidden=8, embed_dim=4)
TINY_V = MHVConfig(widths=(4, 4, 4, 4), head_hidden=8, embed_dim=4, base_voxel_size=0.1)


@given(st.integers(0, 2**32 - 1), st.sampled_from([2, 3, 8]), st.floats(0.05, 2.0))
def test_ppc_matches_double_loop(seed, ns, tau):
    rng = np.random.default_rng(seed)
    z1, z2 = rng.normal(size=(ns, 5)), rng.normal(size=(ns, 5))
    got = ppc_loss(Tensor(z1), Tensor(z2), PPCConfig(tau=tau, ns=ns)).item()
    assert got == pytest.approx(oracles.ppc_loss(z1, z2, tau), rel=1e-10, abs=1e-10)


@pytest.mark.parametrize("ns", [2, 16, 64])
def test_ppc_anchors(ns):
    tau = 0.07
    same = np.ones((ns, 3))
    assert ppc_loss(Tensor(same), Tensor(same), PPCConfig(tau=tau, ns=ns)).item() == pytest.approx(
        math.log(ns), abs=1e-12)
    eye = np.eye(ns)
    want = math.log(1 + (ns - 1) * math.exp(-1 / tau))
    assert ppc_loss(Tensor(eye), Tensor(eye), PPCConfig(tau=tau, ns=ns)).item() == pytest.approx(want, abs=1e-12)


def test_ppc_strict_mask_drops_same_mark_columns():
    z = np.ones((4, 2))
    marks = np.array([0, 0, 1, 1])
    loss = ppc_loss(Tensor(z), Tensor(z), PPCConfig(ns=4), strict_mask(marks, marks)).item()
    assert loss == pytest.approx(math.log(3))  # positive plus the two other-mark columns


def test_ppc_shape_checks():
    with pytest.raises(T.DimensionError):
        ppc_loss(Tensor(np.ones((3, 2))), Tensor(np.ones((4, 2))), PPCConfig())
    with pytest.raises(ValueError):
        PPCConfig(tau=0)


def test_cosine_schedule():
    assert cosine_lr(0, 10, 1e-3) == 1e-3
    assert cosine_lr(10, 10, 1e-3, 1e-5) == pytest.approx(1e-5)
    assert cosine_lr(5, 10, 1.0) == pytest.approx(0.5)
    vals = [cosine_lr(t, 20, 1.0) for t in range(21)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))
    with pytest.raises(ValueError):
        cosine_lr(11, 10, 1.0)


@given(st.integers(0, 2**32 - 1), st.floats(0.0, 0.2))
def test_adamw_matches_scalar_reference(seed, wd):
    rng = np.random.default_rng(seed)
    p0 = rng.normal(size=4)
    grads = [rng.normal(size=4) for _ in range(5)]
    p = Parameter(p0.copy())
    state = AdamWState()
    for g in grads:
        p.grad = g
        adamw_step([("p", p)], state, 0.01, weight_decay=wd)
    want = oracles.adamw(p0, grads, 0.01, 0.9, 0.999, 1e-8, wd)
    np.testing.assert_allclose(p.data, want, rtol=1e-12, atol=1e-15)


def test_adamw_missing_grad_is_zero_grad():
    p = Parameter(np.ones(2))
    adamw_step([("p", p)], AdamWState(), 0.1, weight_decay=0.5)
    np.testing.assert_allclose(p.data, 0.95)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lr0=1e-3, lr_min=1e-2)
    with pytest.raises(ValueError):
        TrainConfig(level="voxel")


def test_steps_per_epoch():
    assert steps_per_epoch(64, TrainConfig(batch_size=2, m_shapes=4)) == 8
    assert steps_per_epoch(3, TrainConfig(batch_size=2, m_shapes=4)) == 1


def shapes():
    clouds, _ = synthetic_shapes(("box", "cone"), 4, seed=0, n_points=128)
    return clouds


def tcfg(**kw):
    base = dict(epochs=3, batch_size=2, lr0=1e-2, m_shapes=2, points_per_shape=64, seed=3)
    base.update(kw)
    return TrainConfig(**base)


def test_pretrain_deterministic_and_resumable():
    pc = PPCConfig(ns=64)
    runs = []
    for _ in range(2):
        records = []
        pretrain_run(shapes(), MHPNet(TINY_P, seed=0), tcfg(), pc, sink=records.append)
        runs.append([r["losses"] for r in records])
    assert runs[0] == runs[1]
    net = MHPNet(TINY_P, seed=0)
    ck = pretrain_run(shapes(), net, tcfg(), pc, stop_after=1)
    assert ck.epoch == 1
    resumed = pretrain_run(shapes(), MHPNet(TINY_P, seed=9), tcfg(), pc, resume=ck)
    assert [r["losses"] for r in resumed.history] == runs[0]


def test_pretrain_scene_and_region_levels_run():
    pc = PPCConfig(ns=32, strict=True)
    for net, level in ((MHVNet(TINY_V), "scene"), (MHVNet(TINY_V), "region")):
        ck = pretrain_run(shapes(), net, tcfg(epochs=1, level=level), pc)
        assert np.isfinite(ck.history[0]["mean_loss"])
        assert ck.optimizer.step == 2


def test_pretrain_changes_parameters_and_records_history():
    net = MHPNet(TINY_P, seed=0)
    before = net.state_dict()
    ck = pretrain_run(shapes(), net, tcfg(epochs=1), PPCConfig(ns=32), transform_cfg=TransformConfig.identity())
    assert any(not np.array_equal(before[k], v) for k, v in ck.params.items())
    assert set(ck.history[0]) == {"epoch", "mean_loss", "lr", "wall_seconds", "losses"}


def test_nonfinite_loss_raises():
    net = MHPNet(TINY_P, seed=0)
    net.point_head.out.weight.data[:] = np.nan
    with pytest.raises(TrainingError, match="non-finite"):
        pretrain_run(shapes(), net, tcfg(epochs=1), PPCConfig(ns=16))


def test_empty_dataset():
    with pytest.raises(ValueError):
        pretrain_run([], MHPNet(TINY_P), tcfg(), PPCConfig())
