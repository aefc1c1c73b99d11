"""Difficulty-aware active learning for semantic segmentation."""

from segal.config import ExperimentConfig
from segal.data import SamplePool, SegSample, generate_synthetic_dataset, split_initial
from segal.harness import ALRunLedger, run_active_learning

__all__ = [
    "ExperimentConfig",
    "SamplePool",
    "SegSample",
    "generate_synthetic_dataset",
    "split_initial",
    "ALRunLedger",
    "run_active_learning",
]

__version__ = "0.1.0"
