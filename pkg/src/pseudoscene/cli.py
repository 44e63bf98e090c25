"""Command-line entry point.

Exit codes: 0 success, 1 usage or validation error (including a failed
gradient check), 2 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, build_net, load_config, net_from_checkpoint
from .data import NUM_PARTS, PART_LABELS, gen_synthetic_dataset, load_dataset, synthetic_shapes, write_pcb
from .evaluate import (
    config_hash,
    labeled_pseudo_scenes,
    linear_probe_classification,
    part_segmentation_eval,
    scene_segmentation_eval,
)
from .scene import make_pseudo_scene, sample_pairs

logger = logging.getLogger("pseudoscene")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="JSON run configuration")
    p.add_argument("--seed", type=int, help="overrides train.seed and data.seed")
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser():
    common = _common()
    parser = _Parser(prog="pseudoscene", description="Shape-to-scene contrastive pre-training toolkit.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("gen-data", parents=[common], help="write a synthetic labeled shape dataset")

    p = sub.add_parser("pretrain", parents=[common], help="contrastive pre-training")
    p.add_argument("--data", type=Path, help="dataset directory (default: synthesize from config)")
    p.add_argument("--resume", type=Path, help="checkpoint to resume from")

    for name, text in (("probe", "linear probe on frozen shape embeddings"),
                       ("partseg", "part segmentation fine-tuning"),
                       ("sceneseg", "pseudo-scene segmentation fine-tuning")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--ckpt", type=Path, help="pre-trained checkpoint (default: random init)")
        p.add_argument("--data", type=Path, help="dataset directory (default: synthesize from config)")
        if name == "sceneseg":
            p.add_argument("--scratch", action="store_true", help="also report a from-scratch run")

    p = sub.add_parser("dump-pairs", parents=[common], help="write one pseudo scene and its pair set")
    p.add_argument("--m", type=int, default=4, help="shapes per scene")
    p.add_argument("--ns", type=int, help="pairs to sample (default: ppc.ns)")
    p.add_argument("--data", type=Path, help="dataset directory (default: synthesize from config)")

    sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    return parser


def _resolve_config(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        if args.seed < 0 or args.seed >= 2 ** 64:
            raise ConfigError(f"--seed must be a u64, got {args.seed}")
        cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, seed=args.seed),
                                  data=dataclasses.replace(cfg.data, seed=args.seed))
    return cfg


def _dataset(args, cfg):
    if getattr(args, "data", None):
        return load_dataset(args.data)
    d = cfg.data
    clouds, classes = synthetic_shapes(d.kinds, d.per_class, d.seed, d.n_points, d.jitter)
    return clouds, classes, list(d.kinds)


def _split(n, fraction, seed):
    perm = np.random.default_rng([seed, 1]).permutation(n)
    n_test = max(1, int(round(n * fraction)))
    if n_test >= n:
        raise ConfigError(f"test_fraction {fraction} leaves no training data for {n} samples")
    return perm[n_test:], perm[:n_test]


def _net(args, cfg, arch=None):
    from .checkpoint import load_checkpoint

    if args.ckpt:
        ckpt = load_checkpoint(args.ckpt)
        if arch and ckpt.arch != arch:
            raise ConfigError(f"{args.command} needs an {arch} checkpoint, got {ckpt.arch}")
        return net_from_checkpoint(ckpt), ckpt.config
    arch = arch or cfg.arch
    model = cfg.model if arch == cfg.arch else {}
    return build_net(arch, model, cfg.train.seed), {"model": model, "arch": arch}


def _write_report(out, report, name="report.json"):
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(report.to_json() + "\n")
    print(json.dumps(report.metrics, sort_keys=True))


def cmd_gen_data(args, cfg):
    d = cfg.data
    manifest = gen_synthetic_dataset(args.out, d.kinds, d.per_class, d.seed, d.n_points, d.jitter)
    print(f"wrote {len(d.kinds) * d.per_class} shapes to {manifest}")


def cmd_pretrain(args, cfg):
    from .checkpoint import load_checkpoint, save_checkpoint
    from .pretrain import pretrain_run

    clouds, _, _ = _dataset(args, cfg)
    net = build_net(cfg.arch, cfg.model, cfg.train.seed)
    resume = load_checkpoint(args.resume) if args.resume else None
    if resume is not None and resume.arch != cfg.arch:
        raise ConfigError(f"resume checkpoint is {resume.arch}, config says {cfg.arch}")
    args.out.mkdir(parents=True, exist_ok=True)
    metrics = args.out / "metrics.csv"
    rows = [] if resume is None else [{k: r[k] for k in ("epoch", "mean_loss", "lr", "wall_seconds")}
                                      for r in resume.history]

    def sink(record):
        rows.append({k: record[k] for k in ("epoch", "mean_loss", "lr", "wall_seconds")})
        with open(metrics, "w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=["epoch", "mean_loss", "lr", "wall_seconds"])
            w.writeheader()
            w.writerows(rows)

    ckpt = pretrain_run(clouds, net, cfg.train, cfg.ppc, sink=sink, transform_cfg=cfg.transform, resume=resume)
    ckpt.config["config_hash"] = config_hash(cfg.to_dict())
    path = save_checkpoint(args.out / "checkpoint.s2s", ckpt)
    (args.out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
    print(f"checkpoint {path}, final loss {rows[-1]['mean_loss']:.4f}" if rows else f"checkpoint {path}")


def cmd_probe(args, cfg):
    clouds, classes, _ = _dataset(args, cfg)
    net, _ = _net(args, cfg, "mhp")
    tr, te = _split(len(clouds), cfg.eval.test_fraction, cfg.train.seed)
    baseline = build_net("mhp", dataclasses.asdict(net.cfg), cfg.train.seed + 1)
    report = linear_probe_classification(
        net, ([clouds[i] for i in tr], classes[tr]), ([clouds[i] for i in te], classes[te]),
        cfg.eval.probe_epochs, cfg.eval.probe_lr, cfg.train.seed, baseline_net=baseline)
    report.config_hash = config_hash(cfg.to_dict())
    _write_report(args.out, report)


def cmd_partseg(args, cfg):
    clouds, classes, kinds = _dataset(args, cfg)
    net, _ = _net(args, cfg)
    tr, te = _split(len(clouds), cfg.eval.test_fraction, cfg.train.seed)
    part_sets = {c: PART_LABELS[k] for c, k in enumerate(kinds)}
    report = part_segmentation_eval(
        net, ([clouds[i] for i in tr], classes[tr]), ([clouds[i] for i in te], classes[te]), part_sets,
        NUM_PARTS, cfg.eval.finetune_epochs, cfg.eval.finetune_lr, cfg.train.seed, cfg.eval.batch_size)
    report.config_hash = config_hash(cfg.to_dict())
    _write_report(args.out, report)


def cmd_sceneseg(args, cfg):
    clouds, classes, kinds = _dataset(args, cfg)
    net, _ = _net(args, cfg, "mhv")
    e, t = cfg.eval, cfg.train
    train = labeled_pseudo_scenes(clouds, classes, e.scenes_train, t.m_shapes, t.seed, t.points_per_shape)
    test = labeled_pseudo_scenes(clouds, classes, e.scenes_test, t.m_shapes, t.seed + 1, t.points_per_shape)
    runs = [("report.json", net)]
    if args.scratch:
        runs.append(("report_scratch.json", build_net("mhv", dataclasses.asdict(net.cfg), t.seed + 1)))
    for name, model in runs:
        report = scene_segmentation_eval(model, train, test, len(kinds), e.finetune_epochs, e.finetune_lr,
                                         t.seed, e.batch_size)
        report.config_hash = config_hash(cfg.to_dict())
        _write_report(args.out, report, name)


def cmd_dump_pairs(args, cfg):
    clouds, _, _ = _dataset(args, cfg)
    if args.m < 1:
        raise ConfigError("--m must be >= 1")
    rng = np.random.default_rng(cfg.train.seed)
    scene = make_pseudo_scene(clouds, args.m, rng, cfg.transform, cfg.train.points_per_shape)
    ns = args.ns or cfg.ppc.ns
    pairs = sample_pairs(scene.shape_mark, ns, rng)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    write_pcb(out / "base.pcb", scene.base_positions, scene.shape_mark)
    write_pcb(out / "view1.pcb", scene.view1, scene.shape_mark)
    write_pcb(out / "view2.pcb", scene.view2, scene.shape_mark)
    with open(out / "pairs.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["u", "v", "mark_u", "mark_v"])
        for u, v in zip(pairs.u, pairs.v):
            w.writerow([int(u), int(v), int(scene.shape_mark[u]), int(scene.shape_mark[v])])
    (out / "transforms.json").write_text(json.dumps(
        {"view1": scene.t1.to_dict(), "view2": scene.t2.to_dict(), "shape_ids": scene.shape_ids.tolist()}) + "\n")
    print(f"scene with {len(scene.base_positions)} points and {len(pairs)} pairs in {out}")


def cmd_gradcheck(args, cfg):
    from .gradcheck import run_suite

    results = run_suite(cfg.train.seed)
    for r in results:
        print(f"{'ok  ' if r.ok else 'FAIL'} {r.name:30s} rel_err={r.max_rel_error:.3e} tol={r.tol:.0e}")
    failed = [r.name for r in results if not r.ok]
    if failed:
        print(f"{len(failed)} check(s) failed: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "pretrain": cmd_pretrain,
    "probe": cmd_probe,
    "partseg": cmd_partseg,
    "sceneseg": cmd_sceneseg,
    "dump-pairs": cmd_dump_pairs,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        cfg = _resolve_config(args)
        return COMMANDS[args.command](args, cfg) or 0
    except (ConfigError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        logger.debug("runtime failure", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
