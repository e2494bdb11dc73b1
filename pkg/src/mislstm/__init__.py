"""Multimodal lifelog classification with block images, CBAM and an LSTM."""

from .ensemble import EnsemblePool, hard_vote, soft_vote, ualre
from .evaluation import MetricReport, macro_f1, stratified_subject_split
from .model import MISLSTM, ModelConfig, build_model, forward_day, predict
from .pipeline import PreparedData, desk_configs, prepare
from .training import CheckpointBundle, TrainConfig, train
from .types import BlockConfig, DayFeatureGrid, DayRecord, HeadLogits, LabelVector

__all__ = [
    "BlockConfig",
    "CheckpointBundle",
    "DayFeatureGrid",
    "DayRecord",
    "EnsemblePool",
    "HeadLogits",
    "LabelVector",
    "MISLSTM",
    "MetricReport",
    "ModelConfig",
    "PreparedData",
    "TrainConfig",
    "build_model",
    "desk_configs",
    "forward_day",
    "hard_vote",
    "macro_f1",
    "predict",
    "prepare",
    "soft_vote",
    "stratified_subject_split",
    "train",
    "ualre",
]
