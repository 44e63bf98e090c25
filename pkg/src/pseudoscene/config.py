"""Strict JSON run configuration.

One document with optional sections ``model``, ``train``, ``ppc``,
``transform``, ``data`` and ``eval``; any key not named by the matching
dataclass is rejected.
"""

from __future__ import annotations

import json
import types
import typing
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .geometry import TransformConfig
from .mhp import MHPConfig, MHPNet
from .mhv import MHVConfig, MHVNet
from .pretrain import PPCConfig, TrainConfig

ARCHS = {"mhp": (MHPConfig, MHPNet), "mhv": (MHVConfig, MHVNet)}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    kinds: tuple[str, ...] = ("sphere", "box", "cylinder", "cone", "torus")
    per_class: int = 40
    n_points: int = 2048
    jitter: float = 0.0
    seed: int = 0


@dataclass(frozen=True)
class EvalConfig:
    probe_epochs: int = 300
    probe_lr: float = 0.05
    test_fraction: float = 1 / 3
    finetune_epochs: int = 10
    finetune_lr: float = 1e-3
    batch_size: int = 4
    scenes_train: int = 16
    scenes_test: int = 8


@dataclass(frozen=True)
class RunConfig:
    arch: str = "mhp"
    model: dict = field(default_factory=dict)
    train: TrainConfig = field(default_factory=TrainConfig)
    ppc: PPCConfig = field(default_factory=PPCConfig)
    transform: TransformConfig = field(default_factory=TransformConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def model_config(self):
        return _build(ARCHS[self.arch][0], self.model, "model")

    def to_dict(self):
        d = asdict(self)
        d["model"] = asdict(self.model_config())
        return d


def _coerce(value, tp, where):
    origin = typing.get_origin(tp)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list, got {type(value).__name__}")
        inner = typing.get_args(tp)[0]
        return tuple(_coerce(v, inner, where) for v in value)
    if tp not in (int, float, str, bool):
        return value
    ok = isinstance(value, tp)
    if tp in (int, float) and isinstance(value, bool):
        ok = False  # JSON true/false is not a number
    elif tp is float and isinstance(value, int):
        ok, value = True, float(value)
    if not ok:
        raise ConfigError(f"{where}: expected {tp.__name__}, got {value!r}")
    return value


def _build(cls, d, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}")
    kwargs = {}
    for k, v in d.items():
        tp = hints[k]
        if typing.get_origin(tp) in (typing.Union, types.UnionType):  # optional field
            if v is None:
                kwargs[k] = None
                continue
            tp = next(a for a in typing.get_args(tp) if a is not type(None))
        kwargs[k] = _coerce(v, tp, f"{where}.{k}")
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def parse_config(d):
    if not isinstance(d, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(d) - {f.name for f in fields(RunConfig)})
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {unknown}")
    arch = d.get("arch", "mhp")
    if arch not in ARCHS:
        raise ConfigError(f"arch must be one of {sorted(ARCHS)}, got {arch!r}")
    sections = {"train": TrainConfig, "ppc": PPCConfig, "transform": TransformConfig,
                "data": DataConfig, "eval": EvalConfig}
    cfg = RunConfig(arch=arch, model=dict(d.get("model", {})),
                    **{k: _build(cls, d.get(k, {}), k) for k, cls in sections.items()})
    cfg.model_config()  # validate now
    return cfg


def load_config(path):
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return parse_config(raw)


def build_net(arch, model, seed=0):
    """Construct a backbone from an architecture name and a model-config dict."""
    if arch not in ARCHS:
        raise ConfigError(f"unknown architecture {arch!r}")
    cfg_cls, net_cls = ARCHS[arch]
    return net_cls(_build(cfg_cls, model, "model"), seed=seed)


def net_from_checkpoint(ckpt):
    net = build_net(ckpt.arch, ckpt.config["model"])
    net.load_state_dict(ckpt.params)
    return net
