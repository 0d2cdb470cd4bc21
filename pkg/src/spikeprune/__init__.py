"""spikeprune: desk-scale spiking-network training and pruning with
criticality-based regeneration.
"""

from .layers import LIFParams, lif_step, surrogate_g, surrogate_gprime
from .network import NetworkSpec, SpikingNetwork, vgg_mini
from .optim import TrainConfig
from .unstructured import SparsitySchedule, current_sparsity, extend_sparsity

__version__ = "0.1.0"

__all__ = [
    "LIFParams",
    "NetworkSpec",
    "SparsitySchedule",
    "SpikingNetwork",
    "TrainConfig",
    "current_sparsity",
    "extend_sparsity",
    "lif_step",
    "surrogate_g",
    "surrogate_gprime",
    "vgg_mini",
    "__version__",
]
