import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pseudoscene import tensor as T
from pseudoscene.geometry import PointCloud, fps, knn_group
from pseudoscene.mhp import (
    MHModuleP,
    MHPConfig,
    MHPNet,
    mh_module_p_forward,
    mhp_point_forward,
    mhp_shape_forward,
    plan_scales,
)

SMALL = MHPConfig(widths=(8, 8, 16, 16), k=4, head_hidden=16, embed_dim=8)


def cloud(n=96, seed=0):
    return PointCloud(np.random.default_rng(seed).normal(size=(n, 3)))


def test_output_shapes():
    net = MHPNet(SMALL, seed=0)
    c = cloud()
    assert mhp_point_forward(c, net).shape == (96, 8)
    assert mhp_shape_forward(c, net).shape == (8,)
    xs, xhs = net.backbone(c)
    assert [x.shape for x in xs] == [(48, 8), (24, 8), (12, 16), (6, 16)]
    assert all(x.shape[0] == 96 for x in xhs)
    assert net.global_features(c).shape == (1, 48)


def test_plan_uses_fps_prefixes():
    p = cloud().positions
    plan = plan_scales(p, (2, 4, 8, 16), 4)
    np.testing.assert_array_equal(plan.scales[2].centers, fps(p, 48))
    np.testing.assert_array_equal(plan.scales[8].centers, plan.scales[2].centers[:12])
    ctr = p[plan.scales[4].centers]
    np.testing.assert_array_equal(plan.scales[4].group, knn_group(ctr, p, 4))
    np.testing.assert_array_equal(plan.scales[4].local, knn_group(ctr, ctr, 4))


def test_high_resolution_map_copies_nearest_center():
    p = cloud(32).positions
    module = MHModuleP(3, 5, 2, 4, np.random.default_rng(0))
    x_s, x_h = mh_module_p_forward(p, p, module)
    plan = plan_scales(p, (2,), 4)
    np.testing.assert_array_equal(x_h.data, x_s.data[plan.scales[2].up])
    # every center maps to itself
    np.testing.assert_array_equal(plan.scales[2].up[plan.scales[2].centers], np.arange(16))


@settings(max_examples=10)
@given(st.integers(0, 2**32 - 1))
def test_point_features_follow_input_permutation(seed):
    net = MHPNet(SMALL, seed=1)
    c = cloud(64, seed)
    perm = np.random.default_rng(seed).permutation(64)
    a = net.point_forward(c).data
    b = net.point_forward(PointCloud(c.positions[perm])).data
    np.testing.assert_allclose(b, a[perm], rtol=1e-10, atol=1e-12)


def test_shape_forward_deterministic():
    net = MHPNet(SMALL, seed=2)
    c = cloud()
    np.testing.assert_array_equal(net.shape_forward(c).data, net.shape_forward(c).data)


def test_too_few_points():
    net = MHPNet(SMALL)
    with pytest.raises(ValueError, match="at least 64"):
        net.point_forward(cloud(63))


def test_wrong_channel_count():
    net = MHPNet(SMALL)
    c = PointCloud(cloud().positions, aux=np.ones((96, 2)))
    with pytest.raises(T.DimensionError):
        net.point_forward(c)
    net_aux = MHPNet(MHPConfig(widths=(4, 4, 4, 4), k=4, in_channels=5, head_hidden=4, embed_dim=4))
    assert net_aux.point_forward(c).shape == (96, 4)


def test_random_start_plan_needs_rng():
    net = MHPNet(MHPConfig(widths=(4, 4, 4, 4), k=4, head_hidden=4, embed_dim=4, random_fps_start=True))
    c = cloud()
    with pytest.raises(ValueError):
        net.plan(c)
    assert net.point_forward(c, net.plan(c, np.random.default_rng(0))).shape == (96, 4)


def test_parameter_names_unique_and_state_roundtrip():
    a, b = MHPNet(SMALL, seed=0), MHPNet(SMALL, seed=1)
    names = [n for n, _ in a.named_parameters()]
    assert len(names) == len(set(names))
    assert "modules.0.sa_feat.weight" in names
    b.load_state_dict(a.state_dict())
    c = cloud()
    np.testing.assert_array_equal(a.point_forward(c).data, b.point_forward(c).data)
    with pytest.raises(KeyError):
        b.load_state_dict({})
