"""Multi-exit CAM feature-masking OOD detection."""

from ._core import (
    DataError,
    Model,
    ModelConfig,
    NumericError,
    ShapeError,
    UsageError,
    auroc,
    build,
    calibrate_threshold,
    cam,
    fpr_at_tpr,
    load_checkpoint,
    run_cli,
    score,
    synth_generate,
)

__all__ = [
    "DataError",
    "Model",
    "ModelConfig",
    "NumericError",
    "ShapeError",
    "UsageError",
    "auroc",
    "build",
    "calibrate_threshold",
    "cam",
    "fpr_at_tpr",
    "load_checkpoint",
    "run_cli",
    "score",
    "synth_generate",
]
