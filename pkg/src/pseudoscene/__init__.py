"""Shape-to-scene contrastive pre-training for point clouds, on a small numpy autodiff core."""

from .geometry import PointCloud, TransformConfig
from .kernels import BACKEND
from .mhp import MHPConfig, MHPNet
from .mhv import MHVConfig, MHVNet
from .pretrain import PPCConfig, TrainConfig, ppc_loss, pretrain_run
from .scene import make_pseudo_scene, sample_pairs

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "MHPConfig",
    "MHPNet",
    "MHVConfig",
    "MHVNet",
    "PPCConfig",
    "PointCloud",
    "TrainConfig",
    "TransformConfig",
    "make_pseudo_scene",
    "ppc_loss",
    "pretrain_run",
    "sample_pairs",
]
