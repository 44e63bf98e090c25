"""Voxel-based multi-scale high-resolution backbone.

Modules are chained on their low-resolution outputs ``x_s``: each one averages
its input into the next voxel scale, runs stacked submanifold layers (27-site
gather + shared linear), fuses the result with the pooled input through a skip
concatenation and an MLP, and copies ``x_s`` back to every point through the
inverse indices. Down- and upsampling are pure index operations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .geometry import PointCloud
from .nn import Block, Head, Module, ModuleList
from .tensor import Tensor
from .voxel import build_hierarchy, pool_points_to_voxels, pool_voxels_up, submanifold_gather


@dataclass(frozen=True)
class MHVConfig:
    scales: tuple[int, ...] = (2, 4, 8, 16)
    widths: tuple[int, ...] = (64, 128, 256, 512)
    conv_layers: int = 2
    head_hidden: int = 256
    embed_dim: int = 128
    in_channels: int = 3
    base_voxel_size: float = 0.05
    region_scale: int = 4

    def __post_init__(self):
        if len(self.scales) != len(self.widths) or not self.scales:
            raise ValueError("scales and widths must be non-empty and equally long")
        if self.conv_layers < 1:
            raise ValueError("conv_layers must be >= 1")
        if self.base_voxel_size <= 0:
            raise ValueError("base_voxel_size must be positive")
        if self.region_scale not in self.scales:
            raise ValueError(f"region_scale {self.region_scale} not among scales {self.scales}")


class SubmanifoldLayer(Module):
    def __init__(self, cin, cout, rng):
        self.block = Block(27 * cin, cout, rng)

    def __call__(self, x, h, s):
        g = submanifold_gather(x, h, s)
        return self.block(T.reshape(g, (g.shape[0], -1)))


class MHModuleV(Module):
    def __init__(self, cin, width, scale, conv_layers, rng):
        self.scale, self.cin, self.width = scale, cin, width
        self.convs = ModuleList()
        c = cin
        for _ in range(conv_layers):
            self.convs.append(SubmanifoldLayer(c, width, rng))
            c = width
        self.fuse = Block(cin + width, width, rng)

    def forward(self, h, feats_in, prev_scale=None):
        """``feats_in`` holds point features (first module) or ``prev_scale`` voxel features.

        Returns ``(x_s, x_s_h)`` at scale-``s`` voxel and point resolution.
        """
        s = self.scale
        if prev_scale is None:
            expected = h.n_points
            pool = lambda f: pool_points_to_voxels(f, h, s)  # noqa: E731
        else:
            lv = h.level(prev_scale)
            if h.levels[h.index(prev_scale) + 1].scale != s:
                raise ValueError(f"scale {prev_scale} is not directly below {s}")
            expected = lv.voxel_count
            pool = lambda f: pool_voxels_up(f, h, prev_scale)  # noqa: E731
        if feats_in.shape[0] != expected:
            raise T.DimensionError(
                f"scale-{s} module expected {expected} input rows, got {feats_in.shape[0]}")
        sub = pool(feats_in)
        x = sub
        for conv in self.convs:
            x = conv(x, h, s)
        x_s = self.fuse(T.concat_cols([sub, x]))
        return x_s, T.gather_rows(x_s, h.level(s).point_to_voxel)


class MHVNet(Module):
    arch = "mhv"

    def __init__(self, cfg=None, seed=0):
        cfg = cfg or MHVConfig()
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.modules = ModuleList()
        cin = cfg.in_channels
        for s, w in zip(cfg.scales, cfg.widths):
            self.modules.append(MHModuleV(cin, w, s, cfg.conv_layers, rng))
            cin = w
        self.point_head = Head(sum(cfg.widths), cfg.head_hidden, cfg.embed_dim, rng)
        r = cfg.scales.index(cfg.region_scale)
        self.region_head = Head(sum(cfg.widths[r:]), cfg.head_hidden, cfg.embed_dim, rng)

    def hierarchy(self, cloud):
        h = build_hierarchy(cloud.positions, self.cfg.base_voxel_size, self.cfg.scales)
        if h.levels[0].voxel_count < 2:
            raise ValueError("cloud occupies a single voxel at the finest scale")
        return h

    def input_features(self, cloud):
        cols = [cloud.positions]
        if cloud.aux is not None:
            cols.append(np.asarray(cloud.aux, dtype=np.float64).reshape(len(cloud), -1))
        feats = np.concatenate(cols, axis=1)
        if feats.shape[1] != self.cfg.in_channels:
            raise T.DimensionError(f"input has {feats.shape[1]} channels, model expects {self.cfg.in_channels}")
        return Tensor(feats)

    def backbone(self, cloud, h=None):
        if not isinstance(cloud, PointCloud):
            cloud = PointCloud(cloud)
        h = h or self.hierarchy(cloud)
        feats, prev = self.input_features(cloud), None
        xs, xhs = [], []
        for mod in self.modules:
            x_s, x_h = mod.forward(h, feats, prev)
            xs.append(x_s)
            xhs.append(x_h)
            feats, prev = x_s, mod.scale
        return xs, xhs, h

    def point_forward(self, cloud, h=None):
        _, xhs, _ = self.backbone(cloud, h)
        return self.point_head(T.concat_cols(xhs))

    def region_features(self, xs, h):
        """Concatenate ``x_r`` with coarser ``x_s`` copied down to region-scale voxels."""
        r = self.cfg.region_scale
        parts = []
        for x_s, s in zip(xs, self.cfg.scales):
            if s == r:
                parts.append(x_s)
            elif s > r:
                parts.append(T.gather_rows(x_s, h.voxel_to_ancestor(r, s)))
        return T.concat_cols(parts)

    def region_forward(self, cloud, h=None):
        xs, _, h = self.backbone(cloud, h)
        return self.region_head(self.region_features(xs, h))


def region_marks(h, point_mark, scale=4):
    """Majority point mark per voxel at ``scale`` (ties go to the lowest mark)."""
    lv = h.level(scale)
    point_mark = np.asarray(point_mark, dtype=np.int64)
    nlab = int(point_mark.max()) + 1
    counts = np.zeros((lv.voxel_count, nlab), dtype=np.int64)
    np.add.at(counts, (lv.point_to_voxel, point_mark), 1)
    return counts.argmax(axis=1)


def mh_module_v_forward(h, feats_in, module, prev_scale=None):
    return module.forward(h, T.as_tensor(feats_in), prev_scale)


def mhv_point_forward(cloud, net):
    return net.point_forward(cloud)


def mhv_region_forward(cloud, net):
    return net.region_forward(cloud)
