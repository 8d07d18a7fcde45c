"""Hierarchical attentive Fourier neural operator with PDE benchmark generators and diagnostics."""

from .model import (ModelConfig, build_ablation, forward, init_params, matched_fno_baseline, paper_config, param_count,
                    tiny_config)
from .training import TrainConfig, evaluate, nmse, train

__version__ = "0.1.0"

__all__ = [
    "ModelConfig", "TrainConfig", "build_ablation", "evaluate", "forward", "init_params", "matched_fno_baseline",
    "nmse", "paper_config", "param_count", "tiny_config", "train",
]
