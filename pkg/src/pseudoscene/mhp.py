"""Point-based multi-scale high-resolution backbone.

Each module subsamples the full-resolution cloud to ``N // scale`` centers by
FPS, aggregates kNN neighborhoods twice (set abstraction, then local
aggregation among centers) and maps the center features back onto all ``N``
points by nearest-neighbor copy. The next module consumes that full-resolution
output, and a point head reads the concatenation of all scales.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .geometry import PointCloud, fps, knn_group, nearest
from .nn import ChannelNorm, Head, Linear, Module, ModuleList
from .tensor import Tensor


@dataclass(frozen=True)
class MHPConfig:
    scales: tuple[int, ...] = (2, 4, 8, 16)
    widths: tuple[int, ...] = (64, 128, 256, 512)
    k: int = 16
    head_hidden: int = 256
    embed_dim: int = 128
    in_channels: int = 3
    random_fps_start: bool = False

    def __post_init__(self):
        if len(self.scales) != len(self.widths) or not self.scales:
            raise ValueError("scales and widths must be non-empty and equally long")
        if any(s < 2 for s in self.scales) or list(self.scales) != sorted(set(self.scales)):
            raise ValueError(f"scales must be strictly increasing and >= 2, got {self.scales}")
        if self.k < 1 or min(self.widths) < 1:
            raise ValueError("k and widths must be positive")


@dataclass
class ScalePlan:
    """Index tables for one scale; depends only on positions."""

    centers: np.ndarray  # (M,) into the cloud
    group: np.ndarray  # (M, k) neighbors among all points
    local: np.ndarray  # (M, k) neighbors among centers
    up: np.ndarray  # (N,) nearest center per point


@dataclass
class PointPlan:
    positions: np.ndarray
    scales: dict[int, ScalePlan] = field(default_factory=dict)


def plan_scales(positions, scales, k, rng=None, random_start=False):
    """FPS once at the finest scale; coarser center sets are its prefixes."""
    p = np.asarray(positions, dtype=np.float64)
    n = len(p)
    counts = {s: n // s for s in scales}
    small = [s for s, m in counts.items() if m < k]
    if small:
        raise ValueError(f"{n} points give fewer than k={k} centers at scales {small}")
    order = fps(p, max(counts.values()), random_start=random_start, rng=rng)
    plan = PointPlan(p)
    for s in scales:
        c = order[:counts[s]]
        cp = p[c]
        plan.scales[s] = ScalePlan(c, knn_group(cp, p, k), knn_group(cp, cp, k), nearest(cp, p))
    return plan


class MHModuleP(Module):
    def __init__(self, cin, width, scale, k, rng):
        self.scale, self.k, self.width = scale, k, width
        # first layers act on [relative position | neighbor feature]
        self.sa_pos = Linear(3, width, rng, bias=False)
        self.sa_feat = Linear(cin, width, rng)
        self.sa_norm = ChannelNorm(width)
        self.la_pos = Linear(3, width, rng, bias=False)
        self.la_feat = Linear(width, width, rng)
        self.la_norm = ChannelNorm(width)

    def _aggregate(self, feats, nbr, src_pos, ctr_pos, pos_fc, feat_fc, norm):
        # W·[dp | f[nbr]] + b == (f W_f + b)[nbr] + dp W_p, evaluated on fewer rows
        k = nbr.shape[1]
        rel = (src_pos[nbr] - ctr_pos[:, None, :]).reshape(-1, 3)
        h = T.add(T.gather_rows(feat_fc(feats), nbr.reshape(-1)), pos_fc(Tensor(rel)))
        return T.group_max(T.relu(norm(h)), k)

    def forward(self, positions, feats, plan):
        """Return ``(x_s, x_s_h)``: center features and their full-resolution copy."""
        sp = plan.scales[self.scale]
        ctr = positions[sp.centers]
        sa = self._aggregate(feats, sp.group, positions, ctr, self.sa_pos, self.sa_feat, self.sa_norm)
        x_s = self._aggregate(sa, sp.local, ctr, ctr, self.la_pos, self.la_feat, self.la_norm)
        return x_s, T.gather_rows(x_s, sp.up)


class MHPNet(Module):
    arch = "mhp"

    def __init__(self, cfg=None, seed=0):
        cfg = cfg or MHPConfig()
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.modules = ModuleList()
        cin = cfg.in_channels
        for s, w in zip(cfg.scales, cfg.widths):
            self.modules.append(MHModuleP(cin, w, s, cfg.k, rng))
            cin = w
        total = sum(cfg.widths)
        self.point_head = Head(total, cfg.head_hidden, cfg.embed_dim, rng)
        self.shape_head = Head(total, cfg.head_hidden, cfg.embed_dim, rng)

    @property
    def min_points(self):
        return max(self.cfg.scales) * self.cfg.k

    def input_features(self, cloud):
        cols = [cloud.positions]
        if cloud.aux is not None:
            cols.append(np.asarray(cloud.aux, dtype=np.float64).reshape(len(cloud), -1))
        feats = np.concatenate(cols, axis=1)
        if feats.shape[1] != self.cfg.in_channels:
            raise T.DimensionError(f"input has {feats.shape[1]} channels, model expects {self.cfg.in_channels}")
        return Tensor(feats)

    def plan(self, cloud, rng=None):
        if len(cloud) < self.min_points:
            raise ValueError(f"need at least {self.min_points} points (16·k), got {len(cloud)}")
        return plan_scales(cloud.positions, self.cfg.scales, self.cfg.k, rng, self.cfg.random_fps_start)

    def backbone(self, cloud, plan=None):
        """Run all modules; returns lists ``[x_s]`` and ``[x_s_h]`` in scale order."""
        if not isinstance(cloud, PointCloud):
            cloud = PointCloud(cloud)
        plan = plan or self.plan(cloud)
        feats = self.input_features(cloud)
        xs, xhs = [], []
        for mod in self.modules:
            x_s, x_h = mod.forward(cloud.positions, feats, plan)
            xs.append(x_s)
            xhs.append(x_h)
            feats = x_h
        return xs, xhs

    def point_forward(self, cloud, plan=None):
        _, xhs = self.backbone(cloud, plan)
        return self.point_head(T.concat_cols(xhs))

    def global_features(self, cloud, plan=None):
        """1×ΣC concatenation of per-scale max-pooled center features."""
        xs, _ = self.backbone(cloud, plan)
        return T.concat_cols([T.group_max(x, x.shape[0]) for x in xs])

    def shape_forward(self, cloud, plan=None):
        out = self.shape_head(self.global_features(cloud, plan))
        return T.reshape(out, (out.shape[1],))


def mh_module_p_forward(points, feats_in, module, plan=None):
    if plan is None:
        plan = plan_scales(points, (module.scale,), module.k)
    return module.forward(np.asarray(points, dtype=np.float64), T.as_tensor(feats_in), plan)


def mhp_point_forward(cloud, net):
    return net.point_forward(cloud)


def mhp_shape_forward(cloud, net):
    return net.shape_forward(cloud)
