"""Multi-view attention classifiers and their training loop."""

from locvalid.models.checkpoint import load_checkpoint, save_checkpoint
from locvalid.models.estimators import (
    LogisticFusion,
    LRWeights,
    MultiViewAttentionClassifier,
    mplr_fit,
    mplr_predict,
)
from locvalid.models.networks import BackboneConfig, Network
from locvalid.models.training import FINETUNE_LEARNING_RATE, Adam, TrainConfig, TrainLog, augment_slices, run_training, train_toy

__all__ = [
    "FINETUNE_LEARNING_RATE",
    "Adam",
    "BackboneConfig",
    "LRWeights",
    "LogisticFusion",
    "MultiViewAttentionClassifier",
    "Network",
    "TrainConfig",
    "TrainLog",
    "augment_slices",
    "load_checkpoint",
    "mplr_fit",
    "mplr_predict",
    "run_training",
    "save_checkpoint",
    "train_toy",
]
