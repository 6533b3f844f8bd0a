"""Implicit temporal alignment head for few-shot video classification, on numpy."""

from .autodiff import Parameter, Tape, Tensor, grad_check
from .checkpoint import checkpoint_load, checkpoint_save
from .data import DatasetManifest, FeatureStore, SyntheticSpec, generate_synthetic, load_manifest
from .episodes import Episode, EpisodeStream, Xoshiro256, sample_episode
from .metrics import dtw_similarity, frame_similarity, mean_pooled_similarity
from .model import ABLATIONS, ITANet, ModelConfig, TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "ABLATIONS", "DatasetManifest", "Episode", "EpisodeStream", "FeatureStore", "ITANet", "ModelConfig",
    "Parameter", "SyntheticSpec", "Tape", "Tensor", "TrainConfig", "Xoshiro256", "checkpoint_load",
    "checkpoint_save", "dtw_similarity", "evaluate", "frame_similarity", "generate_synthetic", "grad_check",
    "load_manifest", "mean_pooled_similarity", "sample_episode", "train",
]
