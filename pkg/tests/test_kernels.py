import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pseudoscene import _fallback, kernels

try:
    from pseudoscene import _kernels
except ImportError:
    _kernels = None

needs_ext = pytest.mark.skipif(_kernels is None, reason="compiled extension not built")


def sorted_cloud(rng, n, grid=None):
    p = rng.uniform(-1, 1, size=(n, 3))
    if grid:
        p = np.round(p * grid) / grid  # many exact ties
    order = np.lexsort((p[:, 2], p[:, 1], p[:, 0]))
    return np.ascontiguousarray(p[order])


@needs_ext
@pytest.mark.parametrize("grid", [None, 3])
@pytest.mark.parametrize("seed", range(5))
def test_fps_backends_identical(seed, grid):
    p = sorted_cloud(np.random.default_rng(seed), 300, grid)
    np.testing.assert_array_equal(_kernels.fps(p, 120, 7), _fallback.fps(p, 120, 7))


@needs_ext
@pytest.mark.parametrize("grid", [None, 3])
@pytest.mark.parametrize("k", [1, 5, 16, 200])
def test_knn_backends_identical(k, grid):
    rng = np.random.default_rng(k)
    p = sorted_cloud(rng, 200, grid)
    q = np.ascontiguousarray(rng.uniform(-1, 1, size=(50, 3)))
    np.testing.assert_array_equal(_kernels.knn(q, p, k), _fallback.knn(q, p, k))


@needs_ext
@given(st.integers(0, 2**32 - 1), st.integers(1, 8))
def test_segment_backends_identical(seed, nseg):
    rng = np.random.default_rng(seed)
    x = np.round(rng.normal(size=(30, 4)), 1)  # ties
    seg = rng.integers(0, nseg, size=30)
    for a, b in zip(_kernels.segment_max(x, seg, nseg), _fallback.segment_max(x, seg, nseg)):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(_kernels.segment_sum(x, seg, nseg), _fallback.segment_sum(x, seg, nseg))


def test_segment_max_empty_segments_are_zero():
    x = np.array([[1.0, -2.0]])
    vals, arg = _fallback.segment_max(x, np.array([1]), 3)
    np.testing.assert_array_equal(vals, [[0, 0], [1, -2], [0, 0]])
    np.testing.assert_array_equal(arg, [[-1, -1], [0, 0], [-1, -1]])


def test_pure_python_switch():
    code = "from pseudoscene import kernels; print(kernels.BACKEND)"
    env = dict(os.environ, PSEUDOSCENE_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@needs_ext
@pytest.mark.skipif(bool(os.environ.get("PSEUDOSCENE_PURE_PYTHON")), reason="fallback forced")
def test_compiled_backend_selected_when_built():
    assert kernels.BACKEND == "compiled"
