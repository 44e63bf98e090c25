"""Multi-scale voxelization with point/voxel index and inverse-index tables.

Scale ``s`` uses voxels of edge ``base_size * s``. Integer coordinates at the
first scale are ``floor(p / (base_size * s0))``; each coarser scale halves
them with floor division, so point -> voxel -> parent lookups always agree.
Voxel ids are assigned in first-occurrence order of the points.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from . import tensor as T

OFFSETS = np.array(list(product((-1, 0, 1), repeat=3)), dtype=np.int64)
CENTER_OFFSET = 13


@dataclass(frozen=True)
class VoxelLevel:
    scale: int
    voxel_size: float
    point_to_voxel: np.ndarray  # (N,)
    voxel_coords: np.ndarray  # (V, 3) int64
    voxel_to_parent: np.ndarray | None  # (V,) into the next level, None at the top
    neighbor_pairs: np.ndarray  # (E, 3): voxel, neighbor voxel, offset id

    @property
    def voxel_count(self):
        return len(self.voxel_coords)


@dataclass(frozen=True)
class VoxelHierarchy:
    base_size: float
    levels: tuple[VoxelLevel, ...]

    @property
    def n_points(self):
        return len(self.levels[0].point_to_voxel)

    @property
    def scales(self):
        return tuple(lv.scale for lv in self.levels)

    def level(self, s):
        for lv in self.levels:
            if lv.scale == s:
                return lv
        raise KeyError(f"scale {s} not in hierarchy {self.scales}")

    def index(self, s):
        return self.scales.index(s)

    def voxel_to_ancestor(self, s, target):
        """Map scale-``s`` voxel ids to the enclosing voxel ids at coarser scale ``target``."""
        i, j = self.index(s), self.index(target)
        if j < i:
            raise ValueError(f"target scale {target} is finer than {s}")
        ids = np.arange(self.levels[i].voxel_count)
        for lv in self.levels[i:j]:
            ids = lv.voxel_to_parent[ids]
        return ids


def _check_scales(scales):
    scales = [int(s) for s in scales]
    if not scales or scales[0] < 1:
        raise ValueError(f"invalid scales {scales}")
    for a, b in zip(scales, scales[1:]):
        r = b // a
        if b <= a or b % a or r & (r - 1):
            raise ValueError(f"scales must increase by powers of two, got {scales}")
    return scales


def _pack(coords):
    lo = coords.min(axis=0) - 1
    span = coords.max(axis=0) + 2 - lo
    mult = np.array([span[1] * span[2], span[2], 1], dtype=np.int64)
    return lo, mult


def _unique_first(keys):
    """Ids in first-occurrence order, plus the first row of each id."""
    uniq, first, inverse = np.unique(keys, return_index=True, return_inverse=True)
    rank = np.empty(len(uniq), dtype=np.int64)
    order = np.argsort(first, kind="stable")
    rank[order] = np.arange(len(uniq))
    return rank[inverse.reshape(-1)], first[order]


def _neighbor_pairs(coords):
    lo, mult = _pack(coords)
    keys = (coords - lo) @ mult
    sorter = np.argsort(keys)
    skeys = keys[sorter]
    out = []
    for oid, off in enumerate(OFFSETS):
        nk = (coords + off - lo) @ mult
        pos = np.searchsorted(skeys, nk)
        pos = np.minimum(pos, len(skeys) - 1)
        hit = skeys[pos] == nk
        v = np.flatnonzero(hit)
        out.append(np.stack([v, sorter[pos[hit]], np.full(len(v), oid)], axis=1))
    return np.concatenate(out).astype(np.int64)


def build_hierarchy(positions, base_size=0.05, scales=(2, 4, 8, 16)):
    p = np.asarray(positions, dtype=np.float64)
    if not base_size > 0:
        raise ValueError(f"base_size must be positive, got {base_size}")
    if p.ndim != 2 or p.shape[1] != 3 or len(p) == 0:
        raise ValueError(f"positions must be N×3 with N >= 1, got {p.shape}")
    if not np.isfinite(p).all():
        bad = np.flatnonzero(~np.isfinite(p).all(axis=1))
        raise ValueError(f"non-finite positions at rows {bad[:5].tolist()}")
    scales = _check_scales(scales)

    coords = np.floor(p / (base_size * scales[0])).astype(np.int64)
    per_level = []
    for i, s in enumerate(scales):
        if i:
            coords = np.floor_divide(coords, scales[i] // scales[i - 1])
        lo, mult = _pack(coords)
        p2v, first = _unique_first((coords - lo) @ mult)
        per_level.append((s, p2v, coords[first], first))

    levels = []
    for i, (s, p2v, vcoords, first) in enumerate(per_level):
        parent = per_level[i + 1][1][first] if i + 1 < len(per_level) else None
        levels.append(VoxelLevel(
            scale=s,
            voxel_size=base_size * s,
            point_to_voxel=p2v,
            voxel_coords=vcoords,
            voxel_to_parent=parent,
            neighbor_pairs=_neighbor_pairs(vcoords),
        ))
    return VoxelHierarchy(float(base_size), tuple(levels))


def _check_rows(x, expected, what):
    if x.shape[0] != expected:
        raise T.DimensionError(f"{what}: expected {expected} rows, got {x.shape[0]}")


def pool_points_to_voxels(features, h, s):
    """Average point features per scale-``s`` voxel."""
    lv = h.level(s)
    _check_rows(features, h.n_points, "point features")
    return T.segment_mean(features, lv.point_to_voxel, lv.voxel_count)


def unpool_voxels_to_points(vfeat, h, s):
    """Copy each scale-``s`` voxel feature to every point inside it."""
    lv = h.level(s)
    _check_rows(vfeat, lv.voxel_count, f"scale-{s} voxel features")
    return T.gather_rows(vfeat, lv.point_to_voxel)


def pool_voxels_up(vfeat, h, s):
    """Average scale-``s`` voxel features into their scale-``2s`` parents."""
    lv = h.level(s)
    if lv.voxel_to_parent is None:
        raise ValueError(f"scale {s} is the coarsest level")
    _check_rows(vfeat, lv.voxel_count, f"scale-{s} voxel features")
    nxt = h.levels[h.index(s) + 1]
    return T.segment_mean(vfeat, lv.voxel_to_parent, nxt.voxel_count)


def submanifold_gather(vfeat, h, s):
    """V×27×C neighborhood features at occupied sites only (zeros where unoccupied).

    Offset ``o`` follows ``OFFSETS[o]``; the output voxel set equals the input
    voxel set, so no site is ever dilated.
    """
    lv = h.level(s)
    _check_rows(vfeat, lv.voxel_count, f"scale-{s} voxel features")
    v, nb, off = lv.neighbor_pairs.T
    c = vfeat.shape[1]
    flat_rows = v * 27 + off
    # every (voxel, offset) slot is filled at most once
    src = T.gather_rows(vfeat, nb)
    return _scatter_slots(src, flat_rows, lv.voxel_count * 27, (lv.voxel_count, 27, c))


def _scatter_slots(src, slots, nslots, shape):
    out = np.zeros((nslots, src.shape[1]))
    out[slots] = src.data

    def backward(g):
        return (g.reshape(nslots, -1)[slots],)

    return T._make(out.reshape(shape), (src,), backward)
