"""Downstream metrics and the desk-scale evaluations built on them."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .geometry import PointCloud, normalize_unit_sphere
from .nn import Linear
from .pretrain import AdamWState, adamw_step
from .scene import make_pseudo_scene


# ---------------------------------------------------------------- metrics

def _check_pair(pred, gt):
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.shape} does not match labels {gt.shape}")
    if pred.size == 0:
        raise ValueError("empty prediction")
    return pred, gt


def overall_accuracy(pred, gt):
    pred, gt = _check_pair(pred, gt)
    return float((pred == gt).mean())


def class_ious(pred, gt, classes):
    """IoU per class in ``classes``; NaN where the class is absent from both."""
    pred, gt = _check_pair(pred, gt)
    out = np.full(len(classes), np.nan)
    for i, c in enumerate(classes):
        p, g = pred == c, gt == c
        union = np.logical_or(p, g).sum()
        if union:
            out[i] = np.logical_and(p, g).sum() / union
    return out


def mean_iou(pred, gt, n_classes):
    """Mean IoU over classes ``0..n_classes-1`` that occur in prediction or labels."""
    ious = class_ious(pred, gt, range(n_classes))
    return float(np.nanmean(ious)) if not np.isnan(ious).all() else 0.0


def shape_iou(pred, gt, parts):
    """Mean IoU over ``parts``, skipping parts absent from both prediction and labels."""
    ious = class_ious(pred, gt, parts)
    # nothing present at all counts as a perfect match
    return float(np.nanmean(ious)) if not np.isnan(ious).all() else 1.0


def part_mious(preds, gts, categories, part_sets):
    """``(instance_miou, class_miou, per_category)`` for part segmentation.

    Instance mIoU averages per-shape IoU over all shapes; class mIoU averages
    the per-category means of those shape IoUs.
    """
    if not (len(preds) == len(gts) == len(categories)):
        raise ValueError("preds, gts and categories must have equal length")
    per_shape = np.array([shape_iou(p, g, part_sets[c]) for p, g, c in zip(preds, gts, categories)])
    cats = np.asarray(categories)
    per_cat = {int(c): float(per_shape[cats == c].mean()) for c in np.unique(cats)}
    return float(per_shape.mean()), float(np.mean(list(per_cat.values()))), per_cat


# ---------------------------------------------------------------- reports

@dataclass
class EvalReport:
    task: str
    metrics: dict
    per_class: dict = field(default_factory=dict)
    n_classes: int = 0
    config_hash: str = ""
    checkpoint_id: str = ""

    def __post_init__(self):
        for name, v in list(self.metrics.items()) + [(f"class {k}", v) for k, v in self.per_class.items()]:
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"metric {name}={v} outside [0, 1]")
        if self.per_class and self.n_classes and len(self.per_class) > self.n_classes:
            raise ValueError(f"{len(self.per_class)} per-class entries for {self.n_classes} classes")

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        d["per_class"] = {str(k): v for k, v in d["per_class"].items()}
        return cls(**d)


def config_hash(config):
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]


def parameter_hash(net):
    h = hashlib.sha256()
    for name, p in net.named_parameters():
        h.update(name.encode())
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()[:16]


# ---------------------------------------------------------------- training helpers

def _fit_linear(x, y, n_classes, epochs, lr, seed, weight_decay=0.0):
    """Full-batch softmax regression on fixed features; returns the layer."""
    layer = Linear(x.shape[1], n_classes, np.random.default_rng(seed))
    params = list(layer.named_parameters())
    state, xt = AdamWState(), T.Tensor(x)
    for _ in range(epochs):
        layer.zero_grad()
        T.softmax_cross_entropy(layer(xt), y).backward(retain_graph=False)
        adamw_step(params, state, lr, weight_decay=weight_decay)
    return layer


def _check_labels(clouds, labels, what):
    labels = np.asarray(labels, dtype=np.int64)
    if len(clouds) != len(labels):
        raise ValueError(f"{what}: {len(clouds)} clouds but {len(labels)} labels")
    if len(clouds) == 0:
        raise ValueError(f"{what} is empty")
    return labels


def embed_shapes(net, clouds):
    """Frozen global embeddings of unit-sphere-normalized clouds (one row per cloud)."""
    rows = []
    with T.no_grad():
        for c in clouds:
            rows.append(net.global_features(normalize_unit_sphere(c)).data[0])
    return np.stack(rows)


def linear_probe_classification(net, train, test, epochs=300, lr=0.05, seed=0, baseline_net=None):
    """Train a linear classifier on frozen global embeddings and report test OA.

    ``train`` and ``test`` are ``(clouds, labels)``. The backbone is never
    updated. When ``baseline_net`` (an untrained backbone of the same
    configuration) is given, the identical protocol is repeated on it and
    reported as ``baseline_oa``.
    """
    (tr_c, tr_y), (te_c, te_y) = train, test
    tr_y = _check_labels(tr_c, tr_y, "train set")
    te_y = _check_labels(te_c, te_y, "test set")
    unseen = set(te_y.tolist()) - set(tr_y.tolist())
    if unseen:
        raise ValueError(f"test labels {sorted(unseen)} never appear in the training set")
    n_classes = int(max(tr_y.max(), te_y.max())) + 1

    def run(backbone):
        ftr, fte = embed_shapes(backbone, tr_c), embed_shapes(backbone, te_c)
        mu, sd = ftr.mean(axis=0), ftr.std(axis=0) + 1e-8
        layer = _fit_linear((ftr - mu) / sd, tr_y, n_classes, epochs, lr, seed)
        with T.no_grad():
            pred = layer(T.Tensor((fte - mu) / sd)).data.argmax(axis=1)
        return pred

    pred = run(net)
    metrics = {"oa": overall_accuracy(pred, te_y)}
    per_class = {str(c): float((pred[te_y == c] == c).mean()) for c in np.unique(te_y)}
    if baseline_net is not None:
        metrics["baseline_oa"] = overall_accuracy(run(baseline_net), te_y)
    return EvalReport("probe", metrics, per_class, n_classes, checkpoint_id=parameter_hash(net))


def _finetune_points(net, embed, samples, n_classes, epochs, lr, seed, batch_size, weight_decay):
    """Fine-tune ``net`` plus a new linear classifier on per-point labels.

    ``samples`` is a list of ``(cloud, labels)``; ``embed(cloud)`` returns
    per-point embeddings. Returns the classifier.
    """
    rng = np.random.default_rng(seed)
    clf = Linear(net.cfg.embed_dim, n_classes, rng)
    params = list(net.named_parameters()) + [(f"classifier.{n}", p) for n, p in clf.named_parameters()]
    state = AdamWState()
    steps = math.ceil(len(samples) / batch_size)
    for epoch in range(epochs):
        order = rng.permutation(len(samples))
        for step in range(steps):
            batch = order[step * batch_size:(step + 1) * batch_size]
            net.zero_grad()
            clf.zero_grad()
            for i in batch:
                cloud, labels = samples[i]
                loss = T.softmax_cross_entropy(clf(embed(cloud)), labels)
                T.scale(loss, 1.0 / len(batch)).backward(retain_graph=False)
                del loss
            adamw_step(params, state, lr, weight_decay=weight_decay)
    return clf


def _predict_points(embed, clf, cloud, allowed=None):
    with T.no_grad():
        logits = clf(embed(cloud)).data
    if allowed is not None:
        mask = np.full(logits.shape[1], -np.inf)
        mask[list(allowed)] = 0.0
        logits = logits + mask
    return logits.argmax(axis=1)


def part_segmentation_eval(net, train, test, part_sets, n_parts, epochs=10, lr=1e-3, seed=0,
                           batch_size=4, weight_decay=0.0):
    """Fine-tune on per-point part labels and report instance and class mIoU.

    ``train``/``test`` are ``(clouds, categories)`` with ``cloud.labels`` set;
    ``part_sets[category]`` lists the part ids of that category, and test
    predictions are restricted to them.
    """
    (tr_c, tr_k), (te_c, te_k) = train, test
    tr_k = _check_labels(tr_c, tr_k, "train set")
    te_k = _check_labels(te_c, te_k, "test set")
    for c in list(tr_c) + list(te_c):
        if c.labels is None:
            raise ValueError("part segmentation needs per-point part labels")
    norm = lambda c: normalize_unit_sphere(c)  # noqa: E731
    samples = [(norm(c), np.asarray(c.labels)) for c in tr_c]
    clf = _finetune_points(net, net.point_forward, samples, n_parts, epochs, lr, seed, batch_size, weight_decay)
    preds = [_predict_points(net.point_forward, clf, norm(c), part_sets[int(k)]) for c, k in zip(te_c, te_k)]
    inst, cls, per_cat = part_mious(preds, [c.labels for c in te_c], te_k, part_sets)
    return EvalReport("partseg", {"instance_miou": inst, "class_miou": cls},
                      {str(k): v for k, v in per_cat.items()}, len(part_sets), checkpoint_id=parameter_hash(net))


def labeled_pseudo_scenes(pool, classes, n_scenes, m, seed, points_per_shape=512):
    """Pseudo scenes whose points are labeled with the class of their source shape."""
    out = []
    classes = np.asarray(classes)
    for i in range(n_scenes):
        rng = np.random.default_rng([seed, i])
        sc = make_pseudo_scene(pool, m, rng, points_per_shape=points_per_shape)
        out.append(PointCloud(sc.base_positions, labels=classes[sc.shape_ids][sc.shape_mark]))
    return out


def scene_segmentation_eval(net, train_scenes, test_scenes, n_classes, epochs=10, lr=1e-3, seed=0,
                            batch_size=2, weight_decay=0.0):
    """Fine-tune a per-point classifier on labeled scenes and report mIoU and OA."""
    for s in list(train_scenes) + list(test_scenes):
        if s.labels is None:
            raise ValueError("scene segmentation needs per-point labels")
        if s.labels.max() >= n_classes:
            raise ValueError(f"label {s.labels.max()} out of range for {n_classes} classes")
    samples = [(s, np.asarray(s.labels)) for s in train_scenes]
    clf = _finetune_points(net, net.point_forward, samples, n_classes, epochs, lr, seed, batch_size, weight_decay)
    pred = np.concatenate([_predict_points(net.point_forward, clf, s) for s in test_scenes])
    gt = np.concatenate([s.labels for s in test_scenes])
    ious = class_ious(pred, gt, range(n_classes))
    per_class = {str(c): float(v) for c, v in enumerate(ious) if not np.isnan(v)}
    return EvalReport("sceneseg", {"miou": mean_iou(pred, gt, n_classes), "oa": overall_accuracy(pred, gt)},
                      per_class, n_classes, checkpoint_id=parameter_hash(net))
