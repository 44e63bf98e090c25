import numpy as np
import pytest

from pseudoscene import tensor as T
from pseudoscene.geometry import PointCloud
from pseudoscene.mhv import (
    MHModuleV,
    MHVConfig,
    MHVNet,
    mh_module_v_forward,
    mhv_point_forward,
    mhv_region_forward,
    region_marks,
)
from pseudoscene.voxel import build_hierarchy

SMALL = MHVConfig(widths=(4, 6, 6, 8), head_hidden=8, embed_dim=5, base_voxel_size=0.1)


def scene(n=200, seed=0):
    rng = np.random.default_rng(seed)
    return PointCloud(np.concatenate([rng.normal(size=(n // 2, 3)) * 0.4, rng.normal(size=(n - n // 2, 3)) * 0.4 + 3]))


def test_output_shapes():
    net = MHVNet(SMALL, seed=0)
    c = scene()
    h = net.hierarchy(c)
    xs, xhs, _ = net.backbone(c, h)
    assert [x.shape for x in xs] == [(lv.voxel_count, w) for lv, w in zip(h.levels, SMALL.widths)]
    assert mhv_point_forward(c, net).shape == (200, 5)
    assert mhv_region_forward(c, net).shape == (h.level(4).voxel_count, 5)


def test_point_output_constant_within_finest_voxel():
    net = MHVNet(SMALL, seed=0)
    c = scene()
    h = net.hierarchy(c)
    out = net.point_forward(c, h).data
    # the point head only sees voxel features, so points sharing every voxel agree
    p2v = h.levels[0].point_to_voxel
    for v in np.unique(p2v)[:10]:
        rows = out[p2v == v]
        np.testing.assert_array_equal(rows, np.broadcast_to(rows[0], rows.shape))


def test_module_chaining_checks_rows_and_scales():
    c = scene()
    h = build_hierarchy(c.positions, 0.1, (2, 4, 8, 16))
    rng = np.random.default_rng(0)
    m2, m4 = MHModuleV(3, 4, 2, 1, rng), MHModuleV(4, 4, 4, 1, rng)
    x2, x2h = mh_module_v_forward(h, c.positions, m2)
    assert x2h.shape == (200, 4)
    x4, _ = mh_module_v_forward(h, x2, m4, prev_scale=2)
    assert x4.shape == (h.level(4).voxel_count, 4)
    with pytest.raises(T.DimensionError):
        mh_module_v_forward(h, x2h, m4, prev_scale=2)
    m16 = MHModuleV(4, 4, 16, 1, rng)
    with pytest.raises(ValueError):
        mh_module_v_forward(h, x2, m16, prev_scale=2)


def test_point_features_independent_of_input_order():
    net = MHVNet(SMALL, seed=3)
    c = scene(seed=4)
    perm = np.random.default_rng(0).permutation(len(c))
    a = net.point_forward(c).data
    b = net.point_forward(PointCloud(c.positions[perm])).data
    np.testing.assert_allclose(b, a[perm], rtol=1e-9, atol=1e-12)


def test_region_marks_majority_with_low_tie_break():
    p = np.array([[0.01, 0, 0], [0.02, 0, 0], [0.03, 0, 0], [5.0, 0, 0], [5.01, 0, 0]])
    h = build_hierarchy(p, 0.05, (2, 4))
    np.testing.assert_array_equal(region_marks(h, [1, 1, 0, 2, 1], 4), [1, 1])


def test_single_voxel_rejected():
    net = MHVNet(SMALL)
    with pytest.raises(ValueError, match="single voxel"):
        net.point_forward(PointCloud(np.zeros((5, 3))))


def test_region_scale_must_be_a_scale():
    with pytest.raises(ValueError):
        MHVConfig(region_scale=3)
