"""Few-shot classification with slot-attention patch filtering, in numpy."""
__version__ = "0.1.0"

from ._backend import BACKEND
from .config import TrainConfig, load_config
from .data import (Episode, FeatureStore, SynthConfig, generate_synthetic, load_store,
                   sample_episode, save_store)
from .errors import SlotFilterError
from .filtering import FilterConfig, filter_features
from .model import ModelParams, forward_episode, init_params
from .rng import RNG
from .stats import aggregate_seeds, chi2_sf, mcnemar
from .training import EvalReport, evaluate, grad_check, train

__all__ = [
    "BACKEND", "TrainConfig", "load_config", "Episode", "FeatureStore", "SynthConfig",
    "generate_synthetic", "load_store", "sample_episode", "save_store", "SlotFilterError",
    "FilterConfig", "filter_features", "ModelParams", "forward_episode", "init_params", "RNG",
    "aggregate_seeds", "chi2_sf", "mcnemar", "EvalReport", "evaluate", "grad_check", "train",
]
