"""Group-reweighted behaviour cloning on imbalanced demonstration data."""
from .core import (DeltaReport, DomainError, LabeledDataset, StateActionPair, WeightVector,
                   empirical_proportions, load_dataset, save_dataset)
from .policy import LinearGaussianPolicy, MlpPolicy
from .rebalance import ReferenceLosses, equal_weights, error_upsample, minmax_reweight
from .trainer import TrainConfig, train_weighted

__version__ = "0.1.0"
__all__ = [
    "DeltaReport", "DomainError", "LabeledDataset", "StateActionPair", "WeightVector",
    "empirical_proportions", "load_dataset", "save_dataset", "LinearGaussianPolicy", "MlpPolicy",
    "ReferenceLosses", "equal_weights", "error_upsample", "minmax_reweight", "TrainConfig",
    "train_weighted",
]
