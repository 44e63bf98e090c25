"""Synthetic labeled primitives and the XYZ / PCB point-file formats.

PCB layout (little-endian)::

    8 bytes  magic b"S2SPCB1\\0"
    u32      point count N
    u8       flags (bit 0: per-point labels present)
    N*3 f32  positions
    N u16    labels (only when flag bit 0 is set)
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import PointCloud

KINDS = ("sphere", "box", "cylinder", "cone", "torus")
PART_LABELS = {
    "sphere": (0, 1),  # upper, lower hemisphere
    "box": (2, 3, 4),  # x faces, y faces, z faces
    "cylinder": (5, 6),  # side, caps
    "cone": (7, 8),  # lateral surface, base disk
    "torus": (9, 10),  # outer, inner half of the tube
}
NUM_PARTS = 11

PCB_MAGIC = b"S2SPCB1\x00"
_PCB_HEAD = struct.Struct("<8sIB")


@dataclass(frozen=True)
class SyntheticShapeSpec:
    kind: str
    n_points: int = 2048
    jitter: float = 0.0
    rotate: bool = True  # random rotation about z

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown shape kind {self.kind!r}; choose from {KINDS}")
        if self.n_points < len(PART_LABELS[self.kind]):
            raise ValueError(f"{self.kind} needs at least {len(PART_LABELS[self.kind])} points")


def _part_counts(areas, n, rng):
    areas = np.asarray(areas, dtype=np.float64)
    counts = rng.multinomial(n - len(areas), areas / areas.sum()) + 1  # every part appears
    return counts


def _disk(n, radius, rng):
    rho = radius * np.sqrt(rng.uniform(size=n))
    th = rng.uniform(0, 2 * np.pi, size=n)
    return rho * np.cos(th), rho * np.sin(th)


def _sphere(n, rng):
    r = rng.uniform(0.6, 1.0)
    v = rng.normal(size=(n, 3))
    v *= r / np.linalg.norm(v, axis=1, keepdims=True)
    labels = np.where(v[:, 2] >= 0, 0, 1)
    # both hemispheres present
    if labels.min() == labels.max():
        v[0, 2] = -v[0, 2]
        labels[0] = 1 - labels[0]
    return v, labels, {"radius": r}


def _box(n, rng):
    half = rng.uniform(0.3, 1.0, size=3)
    a, b, c = half
    areas = [b * c, a * c, a * b]  # per axis pair, both faces
    counts = _part_counts(areas, n, rng)
    pts, labels = [], []
    for axis, cnt in enumerate(counts):
        p = rng.uniform(-half, half, size=(cnt, 3))
        p[:, axis] = np.where(rng.uniform(size=cnt) < 0.5, -half[axis], half[axis])
        pts.append(p)
        labels.append(np.full(cnt, axis))
    return np.concatenate(pts), np.concatenate(labels), {"half_extents": half.tolist()}


def _cylinder(n, rng):
    r = rng.uniform(0.3, 0.8)
    h = rng.uniform(0.4, 1.0)
    n_side, n_caps = _part_counts([2 * np.pi * r * 2 * h, 2 * np.pi * r * r], n, rng)
    th = rng.uniform(0, 2 * np.pi, size=n_side)
    side = np.stack([r * np.cos(th), r * np.sin(th), rng.uniform(-h, h, size=n_side)], axis=1)
    x, y = _disk(n_caps, r, rng)
    caps = np.stack([x, y, np.where(rng.uniform(size=n_caps) < 0.5, -h, h)], axis=1)
    return (np.concatenate([side, caps]), np.r_[np.zeros(n_side, int), np.ones(n_caps, int)],
            {"radius": r, "half_height": h})


def _cone(n, rng):
    r = rng.uniform(0.4, 0.9)
    height = rng.uniform(0.8, 1.8)
    slant = np.hypot(r, height)
    n_lat, n_base = _part_counts([np.pi * r * slant, np.pi * r * r], n, rng)
    t = np.sqrt(rng.uniform(size=n_lat))  # fraction of the way from apex to base
    th = rng.uniform(0, 2 * np.pi, size=n_lat)
    lat = np.stack([t * r * np.cos(th), t * r * np.sin(th), height / 2 - t * height], axis=1)
    x, y = _disk(n_base, r, rng)
    base = np.stack([x, y, np.full(n_base, -height / 2)], axis=1)
    return (np.concatenate([lat, base]), np.r_[np.zeros(n_lat, int), np.ones(n_base, int)],
            {"radius": r, "height": height})


def _torus(n, rng):
    big = rng.uniform(0.6, 0.9)
    small = rng.uniform(0.15, 0.35)
    # tube angle density is proportional to the local ring radius
    vs = []
    while sum(len(v) for v in vs) < n:
        v = rng.uniform(0, 2 * np.pi, size=2 * n)
        keep = rng.uniform(size=2 * n) * (big + small) < big + small * np.cos(v)
        vs.append(v[keep])
    v = np.concatenate(vs)[:n]
    u = rng.uniform(0, 2 * np.pi, size=n)
    ring = big + small * np.cos(v)
    pts = np.stack([ring * np.cos(u), ring * np.sin(u), small * np.sin(v)], axis=1)
    labels = np.where(np.cos(v) >= 0, 0, 1)
    if labels.min() == labels.max():
        pts[0] = [(big - small) * np.cos(u[0]), (big - small) * np.sin(u[0]), 0.0]
        labels[0] = 1 - labels[0]
    return pts, labels, {"major_radius": big, "minor_radius": small}


_SAMPLERS = {"sphere": _sphere, "box": _box, "cylinder": _cylinder, "cone": _cone, "torus": _torus}


def sample_shape(spec, rng):
    """Sample one primitive; ``labels`` holds global part ids from ``PART_LABELS``."""
    pts, local, params = _SAMPLERS[spec.kind](spec.n_points, rng)
    perm = rng.permutation(len(pts))
    pts, local = pts[perm], local[perm]
    if spec.jitter > 0:
        lim = np.sqrt(3.0) * spec.jitter  # per-axis bound, so each 3-vector offset stays within 3 sigma
        pts = pts + np.clip(rng.normal(scale=spec.jitter, size=pts.shape), -lim, lim)
    if spec.rotate:
        a = rng.uniform(0, 2 * np.pi)
        c, s = np.cos(a), np.sin(a)
        pts = pts @ np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]]).T
        params["rotation_z"] = a
    labels = np.asarray(PART_LABELS[spec.kind])[local]
    return PointCloud(pts, labels=labels), params


def shape_seed(seed, index):
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def synthetic_shapes(kinds=KINDS, per_class=40, seed=0, n_points=2048, jitter=0.0, rotate=True):
    """In-memory labeled dataset: ``(clouds, class_ids)`` ordered class by class."""
    clouds, classes = [], []
    i = 0
    for cls, kind in enumerate(kinds):
        spec = SyntheticShapeSpec(kind, n_points, jitter, rotate)
        for _ in range(per_class):
            cloud, _ = sample_shape(spec, np.random.default_rng(shape_seed(seed, i)))
            clouds.append(cloud)
            classes.append(cls)
            i += 1
    return clouds, np.asarray(classes)


def gen_synthetic_dataset(root, kinds=KINDS, per_class=40, seed=0, n_points=2048, jitter=0.0, rotate=True):
    """Write a labeled dataset as PCB files plus ``manifest.csv``; returns the manifest path."""
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    root = Path(root)
    (root / "points").mkdir(parents=True, exist_ok=True)
    clouds, classes = synthetic_shapes(kinds, per_class, seed, n_points, jitter, rotate)
    manifest = root / "manifest.csv"
    with open(manifest, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["file", "class", "kind", "seed"])
        for i, (cloud, cls) in enumerate(zip(clouds, classes)):
            name = f"points/{i:05d}.pcb"
            write_pcb(root / name, cloud.positions, cloud.labels)
            w.writerow([name, int(cls), kinds[cls], shape_seed(seed, i)])
    return manifest


def load_dataset(root):
    """Read a manifest-backed dataset into ``(clouds, class_ids, kinds)``."""
    root = Path(root)
    clouds, classes, kinds = [], [], {}
    with open(root / "manifest.csv", newline="") as f:
        for row in csv.DictReader(f):
            clouds.append(load_points(root / row["file"]))
            classes.append(int(row["class"]))
            kinds[int(row["class"])] = row["kind"]
    return clouds, np.asarray(classes), [kinds[i] for i in sorted(kinds)]


def write_pcb(path, positions, labels=None):
    p = np.asarray(positions, dtype="<f4")
    n = len(p)
    with open(path, "wb") as f:
        f.write(_PCB_HEAD.pack(PCB_MAGIC, n, 1 if labels is not None else 0))
        f.write(np.ascontiguousarray(p).tobytes())
        if labels is not None:
            lab = np.asarray(labels)
            if lab.min(initial=0) < 0 or lab.max(initial=0) > 0xFFFF:
                raise ValueError("labels must fit in u16")
            f.write(lab.astype("<u2").tobytes())


def write_xyz(path, positions, labels=None):
    with open(path, "w") as f:
        for i, p in enumerate(np.asarray(positions, dtype=np.float64).tolist()):
            tail = f" {int(labels[i])}" if labels is not None else ""
            f.write(f"{p[0]!r} {p[1]!r} {p[2]!r}{tail}\n")  # repr round-trips exactly


def _read_pcb(raw, path):
    if len(raw) < _PCB_HEAD.size:
        raise ValueError(f"{path}: short read at byte {len(raw)}, header needs {_PCB_HEAD.size}")
    _, n, flags = _PCB_HEAD.unpack_from(raw)
    has_label = bool(flags & 1)
    need = _PCB_HEAD.size + 12 * n + (2 * n if has_label else 0)
    if len(raw) < need:
        raise ValueError(f"{path}: short read, expected {need} bytes, got {len(raw)}")
    pos = np.frombuffer(raw, dtype="<f4", count=3 * n, offset=_PCB_HEAD.size).reshape(n, 3)
    labels = None
    if has_label:
        labels = np.frombuffer(raw, dtype="<u2", count=n, offset=_PCB_HEAD.size + 12 * n).astype(np.int64)
    return PointCloud(pos.astype(np.float64), labels=labels)


def _read_xyz(text, path):
    pts, labels = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) not in (3, 4):
            raise ValueError(f"{path}:{lineno}: expected 'x y z [label]', got {len(fields)} fields")
        try:
            pts.append([float(v) for v in fields[:3]])
            if len(fields) == 4:
                labels.append(int(fields[3]))
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
    if labels and len(labels) != len(pts):
        raise ValueError(f"{path}: label column present on only some lines")
    if not pts:
        raise ValueError(f"{path}: no points")
    return PointCloud(np.asarray(pts), labels=np.asarray(labels) if labels else None)


def load_points(path):
    """Load an XYZ text or PCB binary file (detected by magic)."""
    raw = Path(path).read_bytes()
    if raw.startswith(PCB_MAGIC):
        return _read_pcb(raw, path)
    return _read_xyz(raw.decode("utf-8"), path)
