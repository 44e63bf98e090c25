"""A small define-by-run reverse-mode autodiff engine over float64 numpy arrays.

Only the operations the backbones and the contrastive loss need are provided.
Each op returns a new :class:`Tensor` that remembers its parents and a closure
mapping the output gradient to parent gradients. ``Tensor.backward`` orders the
recorded graph topologically and visits every node exactly once.
"""

from __future__ import annotations

import contextlib
import threading

import numpy as np

from . import kernels

_state = threading.local()


class DimensionError(ValueError):
    """Raised when operand shapes are incompatible."""


def _grad_enabled():
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference only)."""
    prev = _grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    """Dense float64 array that can take part in reverse-mode differentiation."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.require(data, dtype=np.float64, requirements="C")  # keeps 0-d scalars 0-d
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise DimensionError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None, retain_graph=True):
        """Accumulate d(self)/d(x) into ``x.grad`` for every reachable ``x`` requiring grad.

        With ``retain_graph=False`` the graph is dismantled while walking it and
        only leaves keep ``.grad``; training loops use this to bound memory.
        """
        if grad is None:
            if self.data.size != 1:
                raise DimensionError(f"backward() without a seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = _topo_order(self)
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for i in range(len(order) - 1, -1, -1):
            node = order[i]
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
            if retain_graph:
                node.grad = g
            else:
                node._parents, node._backward, order[i] = (), None, None


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _make(data, parents, backward):
    out = Tensor(data)
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _index_array(idx, name="index"):
    idx = np.asarray(idx)
    if idx.dtype.kind not in "iu":
        raise TypeError(f"{name} must be an integer array, got dtype {idx.dtype}")
    return np.ascontiguousarray(idx, dtype=np.int64)


# ---------------------------------------------------------------------------
# elementwise and shape ops
# ---------------------------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise DimensionError(f"add needs equal shapes, got {a.shape} and {b.shape}")
    return _make(a.data + b.data, (a, b), lambda g: (g, g))


def scale(x, c):
    """Multiply by a python scalar."""
    c = float(c)
    return _make(x.data * c, (x,), lambda g: (g * c,))


def relu(x):
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def sum_all(x):
    return _make(np.array(x.data.sum()), (x,), lambda g: (np.full(x.shape, float(g)),))


def weighted_sum(x, w):
    """``sum(x * w)`` for a constant array ``w`` of the same shape."""
    w = np.asarray(w, dtype=np.float64)
    if w.shape != x.shape:
        raise DimensionError(f"weighted_sum needs equal shapes, got {x.shape} and {w.shape}")
    return _make(np.array((x.data * w).sum()), (x,), lambda g: (w * float(g),))


def mean_all(x):
    n = x.data.size
    return _make(np.array(x.data.mean()), (x,), lambda g: (np.full(x.shape, float(g) / n),))


def reshape(x, shape):
    old = x.shape
    return _make(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x):
    if x.data.ndim != 2:
        raise DimensionError(f"transpose needs a 2-d tensor, got shape {x.shape}")
    return _make(x.data.T, (x,), lambda g: (g.T,))


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return _make(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def linear(x, w, b=None):
    """``x @ w + b`` for ``x`` N×Cin, ``w`` Cin×Cout, ``b`` Cout."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise DimensionError(f"linear shape mismatch: x {x.shape} vs w {w.shape}")
    if b is not None and b.shape != (w.shape[1],):
        raise DimensionError(f"linear bias shape {b.shape} does not match w {w.shape}")
    y = x.data @ w.data
    if b is not None:
        y += b.data

    def backward(g):
        gx = g @ w.data.T if x.requires_grad else None
        gw = x.data.T @ g if w.requires_grad else None
        gb = g.sum(axis=0) if b is not None and b.requires_grad else None
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return _make(y, parents, backward)


def channel_norm(x, gamma, beta, eps=1e-5):
    """Normalize each row over its channels, then apply a per-channel affine map."""
    c = x.shape[1]
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat * gamma.data + beta.data

    def backward(g):
        gxhat = g * gamma.data
        gx = None
        if x.requires_grad:
            gx = inv * (gxhat - gxhat.mean(axis=1, keepdims=True)
                        - xhat * (gxhat * xhat).sum(axis=1, keepdims=True) / c)
        return gx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return _make(y, (x, gamma, beta), backward)


def concat_cols(xs):
    xs = [as_tensor(t) for t in xs]
    rows = {t.shape[0] for t in xs}
    if len(rows) != 1:
        raise DimensionError(f"concat_cols row counts differ: {[t.shape for t in xs]}")
    widths = [t.shape[1] for t in xs]
    bounds = np.cumsum([0] + widths)

    def backward(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(xs)))

    return _make(np.concatenate([t.data for t in xs], axis=1), xs, backward)


def l2_normalize_rows(x, eps=1e-12):
    norm = np.sqrt((x.data * x.data).sum(axis=1, keepdims=True))
    denom = np.maximum(norm, eps)
    y = x.data / denom
    active = norm > eps

    def backward(g):
        # the projection term only applies where the norm (not eps) was the divisor
        dot = (g * y).sum(axis=1, keepdims=True)
        return ((g - np.where(active, y * dot, 0.0)) / denom,)

    return _make(y, (x,), backward)


# ---------------------------------------------------------------------------
# index ops
# ---------------------------------------------------------------------------


def gather_rows(x, idx):
    """``y[m] = x[idx[m]]``; the backward pass scatter-adds, so duplicates accumulate."""
    idx = _index_array(idx)
    n = x.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"gather_rows index out of range for {n} rows")
    shape = x.shape

    def backward(g):
        flat = np.ascontiguousarray(g.reshape(len(idx), -1))
        return (kernels.segment_sum(flat, idx, n).reshape(shape),)

    return _make(x.data[idx], (x,), backward)


def _check_segments(segment_of, n, nseg):
    seg = _index_array(segment_of, "segment_of")
    if seg.shape != (n,):
        raise DimensionError(f"segment_of has length {seg.shape}, expected {n}")
    if n and (seg.min() < 0 or seg.max() >= nseg):
        raise IndexError(f"segment id out of range [0, {nseg})")
    counts = np.bincount(seg, minlength=nseg)
    if nseg and counts.min() == 0:
        empty = np.flatnonzero(counts == 0)
        raise ValueError(f"empty segment(s) {empty[:5].tolist()} of {nseg}")
    return seg, counts


def segment_max(x, segment_of, nseg):
    """Per-segment column max; the gradient goes to the lowest row attaining it."""
    seg, _ = _check_segments(segment_of, x.shape[0], nseg)
    vals, arg = kernels.segment_max(x.data, seg, nseg)
    shape = x.shape
    cols = np.broadcast_to(np.arange(shape[1]), arg.shape)

    def backward(g):
        gx = np.zeros(shape)
        gx[arg, cols] = g  # (segment, column) targets are unique
        return (gx,)

    return _make(vals, (x,), backward)


def group_max(x, group_size):
    """``segment_max`` over consecutive equal-size row blocks (kNN groups)."""
    n, c = x.shape
    if group_size < 1 or n % group_size:
        raise DimensionError(f"{n} rows do not split into groups of {group_size}")
    blocks = x.data.reshape(n // group_size, group_size, c)
    arg = blocks.argmax(axis=1)  # first occurrence == lowest row
    vals = np.take_along_axis(blocks, arg[:, None, :], axis=1)[:, 0, :]

    def backward(g):
        gx = np.zeros_like(blocks)
        np.put_along_axis(gx, arg[:, None, :], g[:, None, :], axis=1)
        return (gx.reshape(n, c),)

    return _make(vals, (x,), backward)


def segment_mean(x, segment_of, nseg):
    seg, counts = _check_segments(segment_of, x.shape[0], nseg)
    inv = 1.0 / counts[:, None]
    flat = np.ascontiguousarray(x.data.reshape(x.shape[0], -1))
    y = kernels.segment_sum(flat, seg, nseg) / counts[:, None]
    # a mean of identical values is that value; summing first can round it away
    first = np.full(nseg, len(seg))
    np.minimum.at(first, seg, np.arange(len(seg)))
    ref = flat[first]
    same = kernels.segment_sum(np.ascontiguousarray(flat != ref[seg], dtype=np.float64), seg, nseg) == 0
    y = np.where(same, ref, y)
    return _make(y, (x,), lambda g: ((g * inv)[seg],))


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------


def softmax_cross_entropy(logits, targets, exclude=None):
    """Mean over rows of ``-log softmax(logits)[target]``.

    ``exclude`` is an optional boolean mask of logits left out of each row's
    normalizer; a row's own target is never excluded.
    """
    n, k = logits.shape
    t = _index_array(targets, "targets")
    if t.shape != (n,):
        raise DimensionError(f"targets length {t.shape} does not match {n} rows")
    if n and (t.min() < 0 or t.max() >= k):
        raise IndexError(f"target out of range [0, {k})")
    rows = np.arange(n)
    z = logits.data
    if exclude is not None:
        exclude = np.asarray(exclude, dtype=bool).copy()
        exclude[rows, t] = False
        z = np.where(exclude, -np.inf, z)
    zmax = z.max(axis=1, keepdims=True)
    e = np.exp(z - zmax)
    s = e.sum(axis=1, keepdims=True)
    logp_t = (z[rows, t] - zmax[:, 0]) - np.log(s[:, 0])
    loss = -logp_t.mean()
    p = e / s

    def backward(g):
        gl = p.copy()
        gl[rows, t] -= 1.0
        return (gl * (float(g) / n),)

    return _make(np.array(loss), (logits,), backward)
