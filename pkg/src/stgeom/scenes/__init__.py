"""Synthetic dynamic scenes with exact geometric ground truth."""
from .generator import DegenerateSceneError, SceneConfig, SceneSequence, generate_scene
from .geometry import (
    BehindCameraError,
    Pinhole,
    decode_cameras,
    encode_cameras,
    project_point,
    unproject,
)
from .io import DATASET_VERSION, DatasetVersionError, read_dataset, write_dataset

__all__ = [
    "DegenerateSceneError", "SceneConfig", "SceneSequence", "generate_scene",
    "BehindCameraError", "Pinhole", "decode_cameras", "encode_cameras",
    "project_point", "unproject", "DATASET_VERSION", "DatasetVersionError",
    "read_dataset", "write_dataset",
]
