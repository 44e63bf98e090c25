"""Point-set kernels: resampling, normalization, FPS, kNN, 1-NN interpolation, transforms.

Every tie between equal distances is broken by lexicographic (x, y, z) position
and then by source index, so results do not depend on the input point order.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from . import tensor as T


@dataclass
class PointCloud:
    positions: np.ndarray
    aux: np.ndarray | None = None
    features: np.ndarray | None = None
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64)
        if self.positions.ndim != 2 or self.positions.shape[1] != 3 or len(self.positions) < 1:
            raise ValueError(f"positions must be N×3 with N >= 1, got {self.positions.shape}")
        if not np.isfinite(self.positions).all():
            raise ValueError("positions contain non-finite values")
        n = len(self.positions)
        for name in ("aux", "features", "labels"):
            arr = getattr(self, name)
            if arr is not None and len(arr) != n:
                raise ValueError(f"{name} has {len(arr)} rows, expected {n}")

    def __len__(self):
        return len(self.positions)

    def take(self, idx):
        pick = lambda a: None if a is None else a[idx]  # noqa: E731
        return PointCloud(self.positions[idx], pick(self.aux), pick(self.features), pick(self.labels))


@dataclass(frozen=True)
class SimilarityTransform:
    """``p -> scale * rotation @ p + translation``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    scale: float = 1.0

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")

    def invert(self):
        rt = self.rotation.T
        return SimilarityTransform(rt, -(rt @ self.translation) / self.scale, 1.0 / self.scale)

    def to_dict(self):
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist(),
                "scale": self.scale}


@dataclass(frozen=True)
class TransformConfig:
    """Ranges for random similarity transforms.

    Rotation is a uniform angle about z in ``[0, z_range)`` composed with tilts
    about x and y uniform in ``[-tilt, tilt]``.
    """

    z_range: float = 2 * np.pi
    tilt: float = 0.1
    shift: float = 0.5
    scale: tuple[float, float] = (0.8, 1.25)

    def __post_init__(self):
        lo, hi = self.scale
        if not (0 < lo <= hi):
            raise ValueError(f"scale range must satisfy 0 < lo <= hi, got {self.scale}")
        if self.z_range < 0 or self.tilt < 0 or self.shift < 0:
            raise ValueError("transform ranges must be non-negative")

    @classmethod
    def identity(cls):
        return cls(z_range=0.0, tilt=0.0, shift=0.0, scale=(1.0, 1.0))


def lex_order(positions):
    """Stable lexicographic (x, y, z) order of the rows."""
    p = np.asarray(positions)
    return np.lexsort((p[:, 2], p[:, 1], p[:, 0]))


def resample(cloud, n, rng):
    if n < 1:
        raise ValueError(f"resample count must be >= 1, got {n}")
    idx = rng.choice(len(cloud), size=n, replace=len(cloud) < n)
    return cloud.take(idx)


def normalize_unit_sphere(cloud):
    p = cloud.positions - cloud.positions.mean(axis=0)
    r = np.sqrt((p * p).sum(axis=1)).max()
    p = p / r if r > 0 else np.zeros_like(p)
    return replace(cloud, positions=p)


def fps(positions, m, random_start=False, rng=None):
    """Farthest-point sampling of ``m`` distinct indices.

    The first pick is the point farthest from the centroid unless
    ``random_start`` is set. Greedy picks form a prefix-consistent sequence:
    ``fps(p, m)[:j] == fps(p, j)``.
    """
    p = np.ascontiguousarray(positions, dtype=np.float64)
    n = len(p)
    if not 1 <= m <= n:
        raise ValueError(f"fps needs 1 <= m <= N, got m={m}, N={n}")
    order = lex_order(p)
    ps = np.ascontiguousarray(p[order])
    if random_start:
        if rng is None:
            raise ValueError("random_start requires an rng")
        start = int(rng.integers(n))
    else:
        c = ps.mean(axis=0)
        start = int(np.argmax(_sqdist(ps, c)))
    return order[kernels.fps(ps, m, start)]


def _sqdist(p, c):
    dx = p[:, 0] - c[0]
    dy = p[:, 1] - c[1]
    dz = p[:, 2] - c[2]
    return dx * dx + dy * dy + dz * dz


def knn_group(centers, positions, k):
    """M×k indices of each center's ``k`` nearest positions, nearest first."""
    p = np.ascontiguousarray(positions, dtype=np.float64)
    if not 1 <= k <= len(p):
        raise ValueError(f"knn needs 1 <= k <= N, got k={k}, N={len(p)}")
    order = lex_order(p)
    q = np.ascontiguousarray(centers, dtype=np.float64)
    return order[kernels.knn(q, np.ascontiguousarray(p[order]), k)]


def nearest(src_pos, dst_pos):
    """Index of the nearest source point for every destination point."""
    return knn_group(dst_pos, src_pos, 1)[:, 0]


def nn_interpolate(src_pos, src_feat, dst_pos, assignment=None):
    """Copy each destination's nearest-source feature (differentiable in ``src_feat``)."""
    if len(src_pos) < 1:
        raise ValueError("nn_interpolate needs at least one source point")
    if assignment is None:
        assignment = nearest(src_pos, dst_pos)
    return T.gather_rows(T.as_tensor(src_feat), assignment)


def _rot_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def _rot_y(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def _rot_z(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


def random_transform(cfg, rng):
    theta = rng.uniform(0.0, cfg.z_range)
    ax, ay = rng.uniform(-cfg.tilt, cfg.tilt, size=2)
    rot = _rot_z(theta) @ _rot_y(ay) @ _rot_x(ax)
    shift = rng.uniform(-cfg.shift, cfg.shift, size=3)
    s = rng.uniform(*cfg.scale)
    return SimilarityTransform(rot, shift, float(s))


def apply_transform(t, positions):
    return t.scale * (np.asarray(positions) @ t.rotation.T) + t.translation
