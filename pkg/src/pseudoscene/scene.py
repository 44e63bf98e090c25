"""Compose normalized shapes into pseudo scenes and sample matched point pairs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import (
    SimilarityTransform,
    TransformConfig,
    apply_transform,
    normalize_unit_sphere,
    random_transform,
    resample,
)

POINTS_PER_SHAPE = 2048
MIN_SEPARATION = 2.0
MARGIN = 0.05
MAX_ATTEMPTS = 10_000


class PlacementError(RuntimeError):
    pass


@dataclass
class PseudoScene:
    base_positions: np.ndarray
    view1: np.ndarray
    view2: np.ndarray
    shape_mark: np.ndarray
    t1: SimilarityTransform
    t2: SimilarityTransform
    m: int
    shape_ids: np.ndarray | None = None  # dataset index of each placed shape


@dataclass
class PairSet:
    u: np.ndarray  # rows into view-1 embeddings
    v: np.ndarray  # rows into view-2 embeddings

    def __len__(self):
        return len(self.u)


def place_barycenters(m, rng):
    """Rejection-sample ``m`` centers with pairwise distance > 2 + margin.

    Centers live in a cube of side ``2.2 * ceil(m ** (1/3))``; after
    ``MAX_ATTEMPTS`` failed draws the cube grows once by 1.5x.
    """
    side = 2.2 * np.ceil(m ** (1.0 / 3.0) - 1e-9)
    min_d2 = (MIN_SEPARATION + MARGIN) ** 2
    for grow in (1.0, 1.5):
        half = 0.5 * side * grow
        centers = np.empty((0, 3))
        attempts = 0
        while len(centers) < m and attempts < MAX_ATTEMPTS:
            attempts += 1
            c = rng.uniform(-half, half, size=3)
            if len(centers) == 0 or (((centers - c) ** 2).sum(axis=1) > min_d2).all():
                centers = np.vstack([centers, c])
        if len(centers) == m:
            return centers
    raise PlacementError(f"could not place {m} shapes after {MAX_ATTEMPTS} attempts at two cube sizes")


def draw_shapes(pool, m, rng):
    """Pick ``m`` dataset indices with replacement."""
    if not pool:
        raise ValueError("shape pool is empty")
    return rng.integers(len(pool), size=m)


def compose_scene(shapes, m, rng, points_per_shape=POINTS_PER_SHAPE):
    """Resample, normalize and translate ``m`` shapes into one composite.

    Returns ``(base_positions, shape_mark)`` with shapes concatenated in order.
    """
    if m < 1 or len(shapes) != m:
        raise ValueError(f"need exactly m >= 1 shapes, got m={m} and {len(shapes)} shapes")
    parts = [normalize_unit_sphere(resample(s, points_per_shape, rng)).positions for s in shapes]
    centers = place_barycenters(m, rng)
    base = np.concatenate([p + c for p, c in zip(parts, centers)])
    mark = np.repeat(np.arange(m), points_per_shape)
    return base, mark


def two_views(base_positions, cfg, rng):
    t1 = random_transform(cfg, rng)
    t2 = random_transform(cfg, rng)
    return apply_transform(t1, base_positions), apply_transform(t2, base_positions), t1, t2


def make_pseudo_scene(pool, m, rng, transform_cfg=None, points_per_shape=POINTS_PER_SHAPE):
    ids = draw_shapes(pool, m, rng)
    base, mark = compose_scene([pool[i] for i in ids], m, rng, points_per_shape)
    v1, v2, t1, t2 = two_views(base, transform_cfg or TransformConfig(), rng)
    return PseudoScene(base, v1, v2, mark, t1, t2, m, ids)


def pair_universe_size(mark_u, mark_v=None):
    mark_v = mark_u if mark_v is None else mark_v
    nlab = int(max(mark_u.max(), mark_v.max())) + 1
    cu = np.bincount(mark_u, minlength=nlab)
    cv = np.bincount(mark_v, minlength=nlab)
    return int((cu * cv).sum())


def sample_pairs(mark_u, ns, rng, mark_v=None):
    """Draw ``ns`` matched pairs uniformly from ``{(i, j): mark_u[i] == mark_v[j]}``.

    The universe is enumerated in row-major (i, j) order, identity pairs
    included. Sampling is without replacement unless the universe is smaller
    than ``ns``.
    """
    if ns < 1:
        raise ValueError(f"ns must be >= 1, got {ns}")
    mark_u = np.asarray(mark_u, dtype=np.int64)
    mark_v = mark_u if mark_v is None else np.asarray(mark_v, dtype=np.int64)
    nlab = int(max(mark_u.max(), mark_v.max())) + 1
    members = np.argsort(mark_v, kind="stable")
    cv = np.bincount(mark_v, minlength=nlab)
    starts = np.concatenate([[0], np.cumsum(cv)[:-1]])
    row_len = cv[mark_u]
    cum = np.cumsum(row_len)
    total = int(cum[-1])
    if total == 0:
        raise ValueError("no matched pairs: the two mark sets share no label")
    flat = rng.choice(total, size=ns, replace=total < ns)
    u = np.searchsorted(cum, flat, side="right")
    offset = flat - (cum[u] - row_len[u])
    v = members[starts[mark_u[u]] + offset]
    return PairSet(u.astype(np.int64), v.astype(np.int64))
