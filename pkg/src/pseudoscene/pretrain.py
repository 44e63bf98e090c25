"""Point-point contrastive loss, optimizer, schedule and the pre-training loop."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .geometry import PointCloud, TransformConfig
from .mhv import region_marks
from .scene import make_pseudo_scene, pair_universe_size, sample_pairs

logger = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class PPCConfig:
    tau: float = 0.07
    ns: int = 4096
    normalize: bool = True
    strict: bool = False  # drop same-mark columns (other than the positive) from each row's normalizer

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.ns < 2:
            raise ValueError(f"ns must be >= 2, got {self.ns}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 600
    batch_size: int = 10
    lr0: float = 1e-3
    lr_min: float = 0.0
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    m_shapes: int = 4
    level: str = "shape"  # shape | scene | region
    points_per_shape: int = 2048
    scenes_per_epoch: int | None = None  # default: len(dataset) // m_shapes

    def __post_init__(self):
        if not self.lr0 > self.lr_min >= 0:
            raise ValueError(f"need lr0 > lr_min >= 0, got {self.lr0}, {self.lr_min}")
        if self.batch_size < 1 or self.epochs < 1 or self.m_shapes < 1:
            raise ValueError("epochs, batch_size and m_shapes must be >= 1")
        if self.level not in ("shape", "scene", "region"):
            raise ValueError(f"unknown level {self.level!r}")


def ppc_loss(z1, z2, cfg, exclude=None):
    """Contrastive loss over row-aligned pair embeddings.

    Row ``k`` of ``z1`` is the query, column ``k`` of ``z2`` its positive key and
    every other column a negative. ``exclude`` (Ns×Ns bool) removes columns
    from the normalizer, used by the strict variant.
    """
    if z1.shape != z2.shape:
        raise T.DimensionError(f"ppc_loss needs equal shapes, got {z1.shape} and {z2.shape}")
    if cfg.normalize:
        z1, z2 = T.l2_normalize_rows(z1), T.l2_normalize_rows(z2)
    sim = T.matmul(z1, T.transpose(z2))
    return T.softmax_cross_entropy(T.scale(sim, 1.0 / cfg.tau), np.arange(z1.shape[0]), exclude)


def strict_mask(mark_u, mark_v):
    """True where column ``j`` shares row ``k``'s mark (the diagonal is kept by the loss)."""
    return np.asarray(mark_u)[:, None] == np.asarray(mark_v)[None, :]


def cosine_lr(t, total, lr0, lr_min=0.0):
    if not 0 <= t <= total:
        raise ValueError(f"step {t} outside [0, {total}]")
    if total == 0:
        return lr0
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * t / total))


@dataclass
class AdamWState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(params, state, lr, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0):
    """One AdamW update over ``(name, Parameter)`` pairs using their ``.grad``.

    Weight decay is decoupled: ``p -= lr * wd * p`` before the Adam step.
    Parameters without a gradient are treated as having a zero gradient.
    """
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        if m.shape != p.shape:
            raise ValueError(f"{name}: moment shape {m.shape} does not match parameter {p.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        if weight_decay:
            p.data *= 1.0 - lr * weight_decay
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return state


@dataclass
class Checkpoint:
    arch: str
    config: dict
    params: dict
    optimizer: AdamWState
    epoch: int  # epochs completed
    rng_state: dict = field(default_factory=dict)
    history: list = field(default_factory=list)


def _scene_embeddings(net, positions, level):
    cloud = PointCloud(positions)
    if level == "region":
        h = net.hierarchy(cloud)
        return net.region_forward(cloud, h), h
    return net.point_forward(cloud), None


def scene_loss(net, scene, pcfg, level, rng):
    """PPC loss for one pseudo scene, plus the sampled pairs' embeddings (for diagnostics)."""
    e1, h1 = _scene_embeddings(net, scene.view1, level)
    e2, h2 = _scene_embeddings(net, scene.view2, level)
    if level == "region":
        s = net.cfg.region_scale
        mark_u, mark_v = region_marks(h1, scene.shape_mark, s), region_marks(h2, scene.shape_mark, s)
    else:
        mark_u = mark_v = scene.shape_mark
    ns = min(pcfg.ns, pair_universe_size(mark_u, mark_v))
    pairs = sample_pairs(mark_u, ns, rng, mark_v)
    z1, z2 = T.gather_rows(e1, pairs.u), T.gather_rows(e2, pairs.v)
    exclude = strict_mask(mark_u[pairs.u], mark_v[pairs.v]) if pcfg.strict else None
    return ppc_loss(z1, z2, pcfg, exclude), (z1, z2, mark_u[pairs.u], mark_v[pairs.v])


def steps_per_epoch(n_shapes, tcfg):
    scenes = tcfg.scenes_per_epoch or max(1, n_shapes // tcfg.m_shapes)
    return max(1, math.ceil(scenes / tcfg.batch_size))


def _step_rng(seed, epoch, step, scene):
    return np.random.default_rng([seed, epoch, step, scene])


def _checkpoint(net, tcfg, pcfg, tf, state, epoch, history):
    return Checkpoint(
        arch=net.arch,
        config={"model": asdict(net.cfg), "train": asdict(tcfg), "ppc": asdict(pcfg), "transform": asdict(tf)},
        params=net.state_dict(),
        optimizer=AdamWState(state.step, {k: v.copy() for k, v in state.m.items()},
                             {k: v.copy() for k, v in state.v.items()}),
        epoch=epoch,
        rng_state={"seed": tcfg.seed, "next_epoch": epoch},
        history=list(history),
    )


def pretrain_run(dataset, net, tcfg, pcfg, sink=None, transform_cfg=None, resume=None, stop_after=None):
    """Contrastive pre-training on pseudo scenes synthesized from ``dataset``.

    Each step synthesizes a batch of scenes, embeds both views, samples fresh
    matched pairs and takes one AdamW step under a cosine schedule. All
    randomness is derived from ``(seed, epoch, step, scene)``, so a run resumed
    from a checkpoint reproduces the uninterrupted run bitwise. ``sink``
    receives one dict per epoch. ``stop_after`` ends early after that many
    epochs (for resume tests).
    """
    if not dataset:
        raise ValueError("dataset is empty")
    tf = transform_cfg or TransformConfig()
    spe = steps_per_epoch(len(dataset), tcfg)
    total = tcfg.epochs * spe
    params = list(net.named_parameters())
    state, start, history = AdamWState(), 0, []
    if resume is not None:
        net.load_state_dict(resume.params)
        state = AdamWState(resume.optimizer.step, {k: v.copy() for k, v in resume.optimizer.m.items()},
                           {k: v.copy() for k, v in resume.optimizer.v.items()})
        start, history = resume.epoch, list(resume.history)
    level = tcfg.level
    for epoch in range(start, tcfg.epochs):
        t0 = time.perf_counter()
        losses = []
        for step in range(spe):
            gstep = epoch * spe + step
            lr = cosine_lr(gstep, total, tcfg.lr0, tcfg.lr_min)
            net.zero_grad()
            values = []
            for b in range(tcfg.batch_size):
                rng = _step_rng(tcfg.seed, epoch, step, b)
                scene = make_pseudo_scene(dataset, tcfg.m_shapes, rng, tf, tcfg.points_per_shape)
                loss, _ = scene_loss(net, scene, pcfg, level, rng)
                values.append(loss.item())
                if not np.isfinite(values[-1]):
                    raise TrainingError(
                        f"non-finite loss {values[-1]} at epoch {epoch} step {step} scene {b} (lr={lr:.3g})")
                # one graph alive at a time; gradients accumulate into the parameters
                T.scale(loss, 1.0 / tcfg.batch_size).backward(retain_graph=False)
                del loss
            value = float(np.mean(values))
            adamw_step(params, state, lr, tcfg.beta1, tcfg.beta2, tcfg.eps, tcfg.weight_decay)
            losses.append(value)
        record = {"epoch": epoch, "mean_loss": float(np.mean(losses)), "lr": lr,
                  "wall_seconds": time.perf_counter() - t0, "losses": losses}
        history.append(record)
        logger.info("epoch %d loss %.4f lr %.3g", epoch, record["mean_loss"], lr)
        if sink is not None:
            sink(record)
        if stop_after is not None and epoch + 1 - start >= stop_after:
            return _checkpoint(net, tcfg, pcfg, tf, state, epoch + 1, history)
    return _checkpoint(net, tcfg, pcfg, tf, state, tcfg.epochs, history)
