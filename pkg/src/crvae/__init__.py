"""Causal recurrent VAE: Granger-graph discovery and causally faithful time series generation."""

__version__ = "0.1.0"

from .datagen import Dataset, gen_henon, gen_lorenz96, gen_var, load_csv, normalize_minmax
from .evaluate import auroc, mmd, tstr
from .pipeline import TrainConfig, generate, load_checkpoint, save_checkpoint, train
from .recnet import ModelSpec, causal_matrix

__all__ = [
    "Dataset", "ModelSpec", "TrainConfig", "auroc", "causal_matrix", "gen_henon",
    "gen_lorenz96", "gen_var", "generate", "load_checkpoint", "load_csv", "mmd",
    "normalize_minmax", "save_checkpoint", "train", "tstr",
]
