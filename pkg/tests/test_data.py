import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pseudoscene.data import (
    KINDS,
    PART_LABELS,
    SyntheticShapeSpec,
    gen_synthetic_dataset,
    load_dataset,
    load_points,
    sample_shape,
    write_pcb,
    write_xyz,
)

seeds = st.integers(0, 2**32 - 1)


def test_xyz_minimal(tmp_path):
    f = tmp_path / "a.xyz"
    f.write_text("0 0 0\n1 2 3\n")
    c = load_points(f)
    np.testing.assert_array_equal(c.positions, [[0, 0, 0], [1, 2, 3]])
    assert c.labels is None


def test_xyz_labels_and_roundtrip(tmp_path):
    p = np.random.default_rng(0).normal(size=(5, 3))
    write_xyz(tmp_path / "a.xyz", p, [0, 1, 2, 3, 4])
    c = load_points(tmp_path / "a.xyz")
    np.testing.assert_array_equal(c.positions, p)
    np.testing.assert_array_equal(c.labels, np.arange(5))


@pytest.mark.parametrize("text,line", [("0 0 0\n1 2\n", 2), ("0 0 0\n\n1 x 3\n", 3)])
def test_xyz_errors_carry_line(tmp_path, text, line):
    f = tmp_path / "bad.xyz"
    f.write_text(text)
    with pytest.raises(ValueError, match=f"bad.xyz:{line}:"):
        load_points(f)


def test_pcb_roundtrip(tmp_path):
    p = np.random.default_rng(1).normal(size=(7, 3))
    write_pcb(tmp_path / "a.pcb", p, np.array([0, 1, 2, 3, 4, 5, 65535]))
    c = load_points(tmp_path / "a.pcb")
    np.testing.assert_array_equal(c.positions, p.astype(np.float32).astype(np.float64))
    assert c.labels.tolist() == [0, 1, 2, 3, 4, 5, 65535]
    write_pcb(tmp_path / "b.pcb", p)
    assert load_points(tmp_path / "b.pcb").labels is None


def test_pcb_layout_bytes(tmp_path):
    write_pcb(tmp_path / "a.pcb", [[1.0, 2.0, 3.0]], [7])
    raw = (tmp_path / "a.pcb").read_bytes()
    assert raw == b"S2SPCB1\x00" + (1).to_bytes(4, "little") + b"\x01" + np.array(
        [1, 2, 3], "<f4").tobytes() + (7).to_bytes(2, "little")


def test_pcb_short_read(tmp_path):
    write_pcb(tmp_path / "a.pcb", np.zeros((4, 3)))
    raw = (tmp_path / "a.pcb").read_bytes()
    (tmp_path / "a.pcb").write_bytes(raw[:-5])
    with pytest.raises(ValueError, match="expected 61 bytes, got 56"):
        load_points(tmp_path / "a.pcb")


def test_pcb_rejects_wide_labels(tmp_path):
    with pytest.raises(ValueError):
        write_pcb(tmp_path / "a.pcb", np.zeros((1, 3)), [70000])


def test_sphere_without_jitter_on_surface():
    c, params = sample_shape(SyntheticShapeSpec("sphere", 500), np.random.default_rng(0))
    np.testing.assert_allclose(np.linalg.norm(c.positions, axis=1), params["radius"], atol=1e-12)


@given(seeds, st.sampled_from(KINDS), st.integers(3, 60))
def test_every_part_present(seed, kind, n):
    c, _ = sample_shape(SyntheticShapeSpec(kind, n), np.random.default_rng(seed))
    assert set(c.labels.tolist()) == set(PART_LABELS[kind])


def _surface_distance(kind, p, params):
    x, y, z = p[:, 0], p[:, 1], p[:, 2]
    a = params.get("rotation_z", 0.0)
    x, y = np.cos(a) * x + np.sin(a) * y, -np.sin(a) * x + np.cos(a) * y
    if kind == "sphere":
        return np.abs(np.sqrt(x * x + y * y + z * z) - params["radius"])
    if kind == "torus":
        ring = np.sqrt(x * x + y * y) - params["major_radius"]
        return np.abs(np.sqrt(ring * ring + z * z) - params["minor_radius"])
    if kind == "box":
        q = np.abs(np.stack([x, y, z], axis=1)) - np.asarray(params["half_extents"])
        outside = np.linalg.norm(np.maximum(q, 0), axis=1)
        return np.where(q.max(axis=1) > 0, outside, -q.max(axis=1))
    return None


@given(seeds, st.sampled_from(("sphere", "torus", "box")), st.floats(0.001, 0.05))
def test_jitter_stays_within_three_sigma(seed, kind, sigma):
    c, params = sample_shape(SyntheticShapeSpec(kind, 200, jitter=sigma), np.random.default_rng(seed))
    assert _surface_distance(kind, c.positions, params).max() <= 3 * sigma + 1e-9


def test_spec_validation():
    with pytest.raises(ValueError):
        SyntheticShapeSpec("pyramid")
    with pytest.raises(ValueError):
        SyntheticShapeSpec("box", n_points=2)


def test_gen_dataset_deterministic(tmp_path):
    a = gen_synthetic_dataset(tmp_path / "a", per_class=2, n_points=64, seed=4)
    b = gen_synthetic_dataset(tmp_path / "b", per_class=2, n_points=64, seed=4)
    rows = list(csv.DictReader(open(a)))
    assert len(rows) == 2 * len(KINDS)
    assert set(rows[0]) == {"file", "class", "kind", "seed"}
    for r in rows:
        assert (tmp_path / "a" / r["file"]).read_bytes() == (tmp_path / "b" / r["file"]).read_bytes()
    clouds, classes, kinds = load_dataset(tmp_path / "a")
    assert kinds == list(KINDS) and classes.tolist() == [0, 0, 1, 1, 2, 2, 3, 3, 4, 4]
    assert all(len(c) == 64 and c.labels is not None for c in clouds)


def test_gen_dataset_rejects_zero(tmp_path):
    with pytest.raises(ValueError):
        gen_synthetic_dataset(tmp_path, per_class=0)


def test_gen_dataset_unwritable(tmp_path):
    (tmp_path / "file").write_text("")
    with pytest.raises(OSError):
        gen_synthetic_dataset(tmp_path / "file" / "sub", per_class=1, n_points=8)
