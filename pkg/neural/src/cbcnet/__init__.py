"""Conditional adversarial networks for intensity/phase image translation."""

from .data import PairDataset, canonical_phases, load_manifest
from .model import PatchDiscriminator, UnetGenerator, required_depth
from .predict import predict_array, predict_file, predict_paths
from .train import TrainingConfig, load_generator, train

__all__ = [
    "PairDataset",
    "PatchDiscriminator",
    "TrainingConfig",
    "UnetGenerator",
    "canonical_phases",
    "load_generator",
    "load_manifest",
    "predict_array",
    "predict_file",
    "predict_paths",
    "required_depth",
    "train",
]
