"""Operator network, losses, loss balancing and training."""
from .model import ArchConfig, OperatorModel, encode_inputs, init_model, parameter_count
from .train import ABLATION_ROWS, TrainConfig, TrainReport, evaluate, predict, rlse, train

__all__ = ["ArchConfig", "OperatorModel", "encode_inputs", "init_model", "parameter_count",
           "ABLATION_ROWS", "TrainConfig", "TrainReport", "evaluate", "predict", "rlse", "train"]
