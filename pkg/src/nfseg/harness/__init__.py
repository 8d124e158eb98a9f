"""Experiment harness: configuration, training, evaluation, checkpoints, comparison, CLI."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .compare import Comparison, RunResult, compare
from .config import ExperimentConfig
from .training import (
    TrainResult,
    evaluate,
    evaluate_masks,
    load_dataset,
    model_from_checkpoint,
    predict,
    predict_mask,
    train,
)

__all__ = [
    "Checkpoint", "Comparison", "ExperimentConfig", "RunResult", "TrainResult", "compare",
    "evaluate", "evaluate_masks", "load_checkpoint", "load_dataset", "model_from_checkpoint",
    "predict", "predict_mask", "save_checkpoint", "train",
]
