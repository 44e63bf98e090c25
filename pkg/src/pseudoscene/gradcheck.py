"""Central finite-difference checks of tape gradients.

``run_suite`` covers every differentiable op plus a full point module and a
voxel pipeline; the ``gradcheck`` CLI command and the acceptance tests use it.
Errors are reported as ``max|analytic - numeric| / max|numeric|`` over the
checked entries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

ELEMENTWISE_TOL = 1e-4
COMPOSITE_TOL = 1e-3


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    tol: float
    checked: int

    @property
    def ok(self):
        return bool(self.max_rel_error < self.tol)


def relative_error(analytic, numeric):
    a, n = np.asarray(analytic).ravel(), np.asarray(numeric).ravel()
    scale = max(np.abs(n).max(initial=0.0), np.abs(a).max(initial=0.0), 1e-12)
    return float(np.abs(a - n).max(initial=0.0) / scale)


def check(name, loss_fn, leaves, tol, eps=1e-5, max_entries=None, rng=None):
    """Compare ``loss_fn()`` tape gradients w.r.t. ``leaves`` against central differences.

    ``loss_fn`` must rebuild its graph on each call and return a scalar tensor.
    With ``max_entries`` only that many randomly chosen entries per leaf are
    perturbed.
    """
    for leaf in leaves:
        leaf.grad = None
    loss_fn().backward()
    analytic, numeric = [], []
    count = 0
    for leaf in leaves:
        flat = leaf.data.reshape(-1)
        grad = leaf.grad.reshape(-1) if leaf.grad is not None else np.zeros(flat.size)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort((rng or np.random.default_rng(0)).choice(flat.size, max_entries, replace=False))
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            with T.no_grad():
                up = loss_fn().item()
            flat[i] = orig - eps
            with T.no_grad():
                down = loss_fn().item()
            flat[i] = orig
            numeric.append((up - down) / (2 * eps))
            analytic.append(grad[i])
        count += len(idx)
    return GradCheckResult(name, relative_error(analytic, numeric), tol, count)


def _leaf(arr):
    return Tensor(np.array(arr, dtype=np.float64), requires_grad=True)


def _away_from_zero(rng, shape, gap=1e-3):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < gap, np.sign(x + 1e-300) * (gap + np.abs(x)), x)


def _distinct(rng, shape, spacing=0.05):
    """Values at least ``spacing`` apart, so max selection is stable under small steps."""
    n = int(np.prod(shape))
    return (rng.permutation(n) * spacing + rng.uniform(0, spacing / 10, n)).reshape(shape)


def op_cases(rng):
    """``(name, loss_fn, leaves, tol)`` for each differentiable tensor op."""
    cases = []

    x, w, b = _leaf(rng.normal(size=(3, 2))), _leaf(rng.normal(size=(2, 2))), _leaf(rng.normal(size=2))
    proj = rng.normal(size=(3, 2))
    cases.append(("linear", lambda: T.weighted_sum(T.linear(x, w, b), proj), [x, w, b], COMPOSITE_TOL))

    r = _leaf(_away_from_zero(rng, (5, 4)))
    pr = rng.normal(size=(5, 4))
    cases.append(("relu", lambda: T.weighted_sum(T.relu(r), pr), [r], ELEMENTWISE_TOL))

    a, c = _leaf(rng.normal(size=(4, 3))), _leaf(rng.normal(size=(4, 3)))
    pa = rng.normal(size=(4, 3))
    cases.append(("add", lambda: T.weighted_sum(T.add(a, c), pa), [a, c], ELEMENTWISE_TOL))
    cases.append(("scale", lambda: T.weighted_sum(T.scale(a, -1.7), pa), [a], ELEMENTWISE_TOL))

    n, g, be = _leaf(rng.normal(size=(4, 3))), _leaf(rng.normal(size=3)), _leaf(rng.normal(size=3))
    pn = rng.normal(size=(4, 3))
    cases.append(("channel_norm", lambda: T.weighted_sum(T.channel_norm(n, g, be), pn), [n, g, be], COMPOSITE_TOL))

    seg = np.array([0, 1, 0, 2, 1, 2, 2, 0])
    sm = _leaf(_distinct(rng, (8, 3)))
    ps = rng.normal(size=(3, 3))
    cases.append(("segment_max", lambda: T.weighted_sum(T.segment_max(sm, seg, 3), ps), [sm], COMPOSITE_TOL))
    gm = _leaf(_distinct(rng, (8, 3)))
    pg = rng.normal(size=(2, 3))
    cases.append(("group_max", lambda: T.weighted_sum(T.group_max(gm, 4), pg), [gm], COMPOSITE_TOL))
    smean = _leaf(rng.normal(size=(8, 3)))
    cases.append(("segment_mean", lambda: T.weighted_sum(T.segment_mean(smean, seg, 3), ps), [smean], COMPOSITE_TOL))

    gx = _leaf(rng.normal(size=(4, 3)))
    gidx = np.array([0, 0, 3, 1, 3, 3])
    pgx = rng.normal(size=(6, 3))
    cases.append(("gather_rows", lambda: T.weighted_sum(T.gather_rows(gx, gidx), pgx), [gx], COMPOSITE_TOL))

    c1, c2 = _leaf(rng.normal(size=(3, 2))), _leaf(rng.normal(size=(3, 4)))
    pc = rng.normal(size=(3, 6))
    cases.append(("concat_cols", lambda: T.weighted_sum(T.concat_cols([c1, c2]), pc), [c1, c2], COMPOSITE_TOL))

    ln = _leaf(rng.normal(size=(5, 4)) + 0.5)
    pl = rng.normal(size=(5, 4))
    cases.append(("l2_normalize_rows", lambda: T.weighted_sum(T.l2_normalize_rows(ln), pl), [ln], COMPOSITE_TOL))

    ma, mb = _leaf(rng.normal(size=(3, 4))), _leaf(rng.normal(size=(3, 4)))
    pm = rng.normal(size=(3, 3))
    cases.append(("matmul_transpose",
                  lambda: T.weighted_sum(T.matmul(ma, T.transpose(mb)), pm), [ma, mb], COMPOSITE_TOL))

    lg = _leaf(rng.normal(size=(6, 5)))
    tg = rng.integers(0, 5, size=6)
    cases.append(("softmax_cross_entropy", lambda: T.softmax_cross_entropy(lg, tg), [lg], COMPOSITE_TOL))
    ex = rng.uniform(size=(6, 5)) < 0.4
    cases.append(("softmax_cross_entropy_masked",
                  lambda: T.softmax_cross_entropy(lg, tg, ex), [lg], COMPOSITE_TOL))
    return cases


def _mlp_case(rng):
    from .nn import Linear

    x = Tensor(rng.normal(size=(6, 4)))
    layers = [Linear(4, 5, rng), Linear(5, 5, rng), Linear(5, 3, rng)]
    for lay in layers:
        lay.bias.data = rng.normal(scale=0.1, size=lay.bias.shape)
    targets = rng.integers(0, 3, size=6)

    def loss():
        h = T.relu(layers[0](x))
        h = T.relu(layers[1](h))
        return T.softmax_cross_entropy(layers[2](h), targets)

    params = [p for lay in layers for p in lay.parameters()]
    return "mlp3_cross_entropy", loss, params, ELEMENTWISE_TOL


def model_cases(rng):
    """Gradient checks through a full point module and a full voxel pipeline."""
    from .geometry import PointCloud, nn_interpolate
    from .mhp import MHModuleP, plan_scales
    from .mhv import MHVConfig, MHVNet
    from .pretrain import PPCConfig, ppc_loss
    from .voxel import build_hierarchy, submanifold_gather

    cases = [_mlp_case(rng)]

    src = rng.normal(size=(7, 3))
    feat = _leaf(rng.normal(size=(7, 3)))
    dst = rng.normal(size=(12, 3))
    pn = rng.normal(size=(12, 3))
    cases.append(("nn_interpolate", lambda: T.weighted_sum(nn_interpolate(src, feat, dst), pn), [feat],
                  COMPOSITE_TOL))

    z1, z2 = _leaf(rng.normal(size=(8, 5))), _leaf(rng.normal(size=(8, 5)))
    cfg = PPCConfig(tau=0.5, ns=8)
    cases.append(("ppc_loss", lambda: ppc_loss(z1, z2, cfg), [z1, z2], COMPOSITE_TOL))

    pts = rng.uniform(0, 0.6, size=(30, 3))
    h = build_hierarchy(pts, 0.05, (2, 4))
    vf = _leaf(rng.normal(size=(h.levels[0].voxel_count, 2)))
    pv = rng.normal(size=(h.levels[0].voxel_count, 27, 2))
    cases.append(("submanifold_gather",
                  lambda: T.weighted_sum(submanifold_gather(vf, h, 2), pv), [vf], COMPOSITE_TOL))

    # one full point module: N=32, k=4
    p32 = rng.normal(size=(32, 3))
    module = MHModuleP(3, 6, 2, 4, rng)
    plan = plan_scales(p32, (2,), 4)
    f32 = _leaf(rng.normal(size=(32, 3)))
    w_s, w_h = rng.normal(size=(16, 6)), rng.normal(size=(32, 6))

    def mhp_loss():
        x_s, x_h = module.forward(p32, f32, plan)
        return T.add(T.weighted_sum(x_s, w_s), T.weighted_sum(x_h, w_h))

    cases.append(("mhp_module", mhp_loss, [f32] + module.parameters(), COMPOSITE_TOL))

    # voxel pipeline on a 40-point toy scene: two clusters
    toy = np.concatenate([rng.uniform(0, 0.5, size=(20, 3)), rng.uniform(1.2, 1.7, size=(20, 3))])
    net = MHVNet(MHVConfig(widths=(4, 4, 4, 4), head_hidden=6, embed_dim=3, conv_layers=2), seed=1)
    cloud = PointCloud(toy)
    hv = net.hierarchy(cloud)
    wv = rng.normal(size=(40, 3))

    def mhv_loss():
        return T.weighted_sum(net.point_forward(cloud, hv), wv)

    cases.append(("mhv_pipeline", mhv_loss, net.parameters(), COMPOSITE_TOL))
    return cases


def run_suite(seed=0, max_entries=12):
    """Run every case; large leaves are sampled at ``max_entries`` entries."""
    rng = np.random.default_rng(seed)
    results = []
    for name, fn, leaves, tol in op_cases(rng) + model_cases(rng):
        results.append(check(name, fn, leaves, tol, max_entries=max_entries, rng=rng))
    return results
