"""Training orchestration, evaluation metrics and alignment utilities."""
from .config import ConfigError, RunConfig, TrainConfig, load_config, parse_config
from .evaluate import predict, score
from .metrics import (
    MetricsReport,
    depth_metrics,
    pointmap_metrics,
    pose_metrics,
    seg_metrics,
    tracking_metrics,
    umeyama_align,
)
from .model import GROUPS, ModelConfig, ModelParams, forward, init_params
from .training import (
    FreezeViolation,
    StagePlan,
    train_single_stage,
    train_stage1,
    train_stage2,
)

__all__ = [
    "ConfigError", "RunConfig", "TrainConfig", "load_config", "parse_config",
    "predict", "score", "MetricsReport", "depth_metrics", "pointmap_metrics",
    "pose_metrics", "seg_metrics", "tracking_metrics", "umeyama_align", "GROUPS",
    "ModelConfig", "ModelParams", "forward", "init_params", "FreezeViolation",
    "StagePlan", "train_single_stage", "train_stage1", "train_stage2",
]
