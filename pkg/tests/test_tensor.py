import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pseudoscene import tensor as T
from pseudoscene.gradcheck import check, op_cases, run_suite
from pseudoscene.tensor import DimensionError, Tensor

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def leaf(a):
    return Tensor(np.asarray(a, dtype=float), requires_grad=True)


@pytest.mark.parametrize("case", op_cases(np.random.default_rng(3)), ids=lambda c: c[0])
def test_op_gradients_match_finite_differences(case):
    name, fn, leaves, tol = case
    r = check(name, fn, leaves, tol)
    assert r.ok, f"{name}: {r.max_rel_error:.3e}"


def test_suite_reports_every_case():
    names = [r.name for r in run_suite(seed=1, max_entries=4)]
    assert {"mhp_module", "mhv_pipeline", "relu", "softmax_cross_entropy"} <= set(names)


def test_linear_forward():
    x = leaf([[1.0, 2.0]])
    w = leaf([[1.0, 0.0, 2.0], [0.5, 1.0, -1.0]])
    b = leaf([0.0, 1.0, 0.0])
    np.testing.assert_array_equal(T.linear(x, w, b).data, [[2.0, 3.0, 0.0]])


def test_gradient_accumulates_over_reuse():
    x = leaf([1.0, -2.0, 3.0])
    y = T.add(x, x)
    T.sum_all(T.add(y, x)).backward()
    np.testing.assert_array_equal(x.grad, [3.0, 3.0, 3.0])


def test_leaf_gradients_accumulate_across_backward_calls():
    x = leaf([1.0, 2.0])
    T.sum_all(x).backward()
    T.sum_all(T.scale(x, 2.0)).backward()
    np.testing.assert_array_equal(x.grad, [3.0, 3.0])


def test_diamond_graph_visits_each_node_once():
    x = leaf([[1.0, 2.0]])
    a = T.scale(x, 2.0)
    b = T.relu(a)
    c = T.add(a, b)
    T.sum_all(c).backward()
    np.testing.assert_array_equal(x.grad, [[4.0, 4.0]])


def test_retain_graph_false_dismantles_intermediates():
    x = leaf([[1.0, 2.0]])
    y = T.scale(x, 3.0)
    loss = T.sum_all(y)
    loss.backward(retain_graph=False)
    np.testing.assert_array_equal(x.grad, [[3.0, 3.0]])
    assert y._parents == () and y._backward is None


def test_no_grad_records_nothing():
    x = leaf([1.0])
    with T.no_grad():
        y = T.scale(x, 2.0)
    assert not y.requires_grad and y._parents == ()
    assert T.scale(x, 2.0).requires_grad


def test_backward_needs_scalar_without_seed():
    with pytest.raises(DimensionError):
        T.scale(leaf([1.0, 2.0]), 1.0).backward()


@pytest.mark.parametrize("fn", [
    lambda: T.add(leaf([[1.0]]), leaf([[1.0, 2.0]])),
    lambda: T.matmul(leaf(np.ones((2, 3))), leaf(np.ones((2, 3)))),
    lambda: T.linear(leaf(np.ones((2, 3))), leaf(np.ones((4, 2)))),
    lambda: T.linear(leaf(np.ones((2, 3))), leaf(np.ones((3, 2))), leaf(np.ones(3))),
    lambda: T.concat_cols([leaf(np.ones((2, 1))), leaf(np.ones((3, 1)))]),
    lambda: T.group_max(leaf(np.ones((5, 2))), 2),
    lambda: T.softmax_cross_entropy(leaf(np.ones((2, 3))), [0, 1, 2]),
])
def test_shape_mismatches_raise(fn):
    with pytest.raises(DimensionError):
        fn()


def test_gather_out_of_range():
    with pytest.raises(IndexError):
        T.gather_rows(leaf(np.ones((3, 2))), [0, 3])
    with pytest.raises(TypeError):
        T.gather_rows(leaf(np.ones((3, 2))), [0.0, 1.0])


def test_segment_ops_reject_empty_segments():
    with pytest.raises(ValueError, match="empty segment"):
        T.segment_mean(leaf(np.ones((3, 2))), [0, 0, 2], 3)
    with pytest.raises(IndexError):
        T.segment_max(leaf(np.ones((3, 2))), [0, 1, 3], 3)


def test_segment_mean_matches_sum_over_count_exactly():
    rng = np.random.default_rng(8)
    x = rng.normal(size=(50, 4))
    seg = np.concatenate([np.arange(7), rng.integers(0, 7, 43)])
    want = np.zeros((7, 4))
    for s in range(7):
        rows = [x[i] for i in range(50) if seg[i] == s]
        acc = np.zeros(4)
        for r in rows:
            acc = acc + r
        want[s] = acc / len(rows)
    np.testing.assert_array_equal(T.segment_mean(Tensor(x), seg, 7).data, want)


@given(st.floats(-1e300, 1e300, allow_nan=False), st.integers(1, 40))
def test_segment_mean_of_identical_rows_is_exact(value, n):
    x = Tensor(np.full((n, 2), value))
    assert T.segment_mean(x, np.zeros(n, dtype=int), 1).data.tolist() == [[value, value]]


def test_segment_max_ties_go_to_lowest_row():
    x = leaf([[1.0, 5.0], [1.0, 2.0], [0.0, 5.0]])
    y = T.segment_max(x, [0, 0, 0], 1)
    np.testing.assert_array_equal(y.data, [[1.0, 5.0]])
    T.sum_all(y).backward()
    np.testing.assert_array_equal(x.grad, [[1.0, 1.0], [0.0, 0.0], [0.0, 0.0]])


def test_group_max_matches_segment_max():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(12, 4))
    a = T.group_max(Tensor(x), 3).data
    b = T.segment_max(Tensor(x), np.repeat(np.arange(4), 3), 4).data
    np.testing.assert_array_equal(a, b)


def test_cross_entropy_exclusion_keeps_target():
    logits = leaf([[0.0, 0.0, 0.0]])
    full = T.softmax_cross_entropy(logits, [0]).item()
    assert full == pytest.approx(np.log(3))
    masked = T.softmax_cross_entropy(logits, [0], exclude=[[True, True, False]]).item()
    assert masked == pytest.approx(np.log(2))


@given(arrays(float, (4, 3), elements=finite), arrays(float, (3, 2), elements=finite))
def test_linear_gradients_closed_form(x, w):
    xt, wt = leaf(x), leaf(w)
    T.sum_all(T.linear(xt, wt)).backward()
    np.testing.assert_allclose(xt.grad, np.ones((4, 2)) @ w.T)
    np.testing.assert_allclose(wt.grad, x.T @ np.ones((4, 2)))


@given(arrays(float, (5, 3), elements=finite).filter(lambda a: (np.linalg.norm(a, axis=1) > 1e-3).all()))
def test_l2_normalize_rows_unit_norm(x):
    y = T.l2_normalize_rows(Tensor(x)).data
    np.testing.assert_allclose(np.linalg.norm(y, axis=1), 1.0, rtol=1e-12)


@given(arrays(float, (6, 4), elements=finite))
def test_softmax_cross_entropy_matches_logsumexp(z):
    t = np.arange(6) % 4
    got = T.softmax_cross_entropy(Tensor(z), t).item()
    m = z.max(axis=1)
    ref = np.mean(m + np.log(np.exp(z - m[:, None]).sum(axis=1)) - z[np.arange(6), t])
    assert got == pytest.approx(ref, rel=1e-12, abs=1e-12)


@given(arrays(float, (6, 5), elements=finite), st.floats(0.0, 3.0))
def test_channel_norm_zero_mean_unit_variance(x, shift):
    x = x + np.arange(5) * shift
    y = T.channel_norm(Tensor(x), Tensor(np.ones(5)), Tensor(np.zeros(5)), eps=0.0 + 1e-12).data
    spread = x.std(axis=1) > 1e-3
    np.testing.assert_allclose(y[spread].mean(axis=1), 0.0, atol=1e-9)
    np.testing.assert_allclose(y[spread].var(axis=1), 1.0, rtol=1e-6)
