"""Fractional spectral augmentation for graph-level anomaly detection."""

from .estimator import FracAugClassifier, FractionalGraphTransformer, check_graphs
from .fgg import FggParams, generate, materialize, train_fgg
from .gnn import GinConfig, GinModel
from .graphs import (
    Dataset,
    Graph,
    SplitAssignment,
    load_tudataset,
    make_synthetic_dataset,
    stratified_split,
)
from .metrics import auprc, auroc, evaluate, macro_f1
from .mvp import MvpConfig, pseudo_label
from .pipeline import PipelineConfig, run_fracaug, run_vanilla
from .spectral import SpectralCache, fractional_power, preprocess_adjacency

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "FggParams",
    "FracAugClassifier",
    "FractionalGraphTransformer",
    "GinConfig",
    "GinModel",
    "Graph",
    "MvpConfig",
    "PipelineConfig",
    "SpectralCache",
    "SplitAssignment",
    "auprc",
    "auroc",
    "check_graphs",
    "evaluate",
    "fractional_power",
    "generate",
    "load_tudataset",
    "macro_f1",
    "make_synthetic_dataset",
    "materialize",
    "pseudo_label",
    "preprocess_adjacency",
    "run_fracaug",
    "run_vanilla",
    "stratified_split",
    "train_fgg",
]
