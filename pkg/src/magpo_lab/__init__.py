"""Guided multi-agent policy optimization: exact tabular algorithm, neural
trainer with baselines, environments and evaluation statistics."""

from .envs import ConfigError, CoordSum, DecGame, make_env
from .trainer import ALGORITHMS, TrainConfig, run_training

__version__ = "0.1.0"

__all__ = ["ALGORITHMS", "ConfigError", "CoordSum", "DecGame", "TrainConfig", "make_env",
           "run_training", "__version__"]
