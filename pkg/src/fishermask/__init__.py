"""Batch active learning by greedy Fisher-trace minimisation over the most
Fisher-important parameters of a small network."""

from .data import Dataset, load_csv, load_idx_pair, subset_by_class_counts, synth_gaussian_imbalanced
from .estimators import (
    BaitSampler,
    EntropySampler,
    FisherMaskSampler,
    FisherMaskTransformer,
    FisherNetClassifier,
    KCenterSampler,
    MarginSampler,
    RandomSampler,
)
from .exceptions import ConfigError, ContractError, FisherMaskError, FormatError, NumericError, ResourceError
from .fisher import build_mask, fisher_diag_pool, grad_factor, layer_profile, pool_fisher_masked
from .harness import ExperimentConfig, RunRecord, aggregate_trials, run_experiment
from .model import ModelSpec, ModelState, TrainConfig, init_params, train
from .selector import STRATEGIES, fishermask_query, select

__version__ = "0.1.0"

__all__ = [
    "BaitSampler",
    "ConfigError",
    "ContractError",
    "Dataset",
    "EntropySampler",
    "ExperimentConfig",
    "FisherMaskError",
    "FisherMaskSampler",
    "FisherMaskTransformer",
    "FisherNetClassifier",
    "FormatError",
    "KCenterSampler",
    "MarginSampler",
    "ModelSpec",
    "ModelState",
    "NumericError",
    "RandomSampler",
    "ResourceError",
    "RunRecord",
    "STRATEGIES",
    "TrainConfig",
    "aggregate_trials",
    "build_mask",
    "fisher_diag_pool",
    "fishermask_query",
    "grad_factor",
    "init_params",
    "layer_profile",
    "load_csv",
    "load_idx_pair",
    "pool_fisher_masked",
    "run_experiment",
    "select",
    "subset_by_class_counts",
    "synth_gaussian_imbalanced",
    "train",
]
