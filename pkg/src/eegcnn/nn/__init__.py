"""Minimal float64 CNN engine: layers, softmax cross-entropy, Adam, training."""

from .layers import Conv, Dense, Dropout, Flatten, Layer, MaxPool, ReLU, ShapeError, Softmax
from .model import ARCHITECTURES, Model, architecture_layers, build_model, cross_entropy, one_hot
from .gradcheck import GradCheckResult, check_model_gradients
from .optim import Adam, AdamState, adam_step
from .train import EarlyStopping, TrainConfig, TrainError, TrainLog, evaluate, train

__all__ = [
    "ARCHITECTURES", "Adam", "AdamState", "Conv", "Dense", "Dropout", "EarlyStopping", "Flatten",
    "GradCheckResult", "Layer", "MaxPool", "Model", "ReLU", "ShapeError", "Softmax", "TrainConfig", "TrainError",
    "TrainLog", "adam_step", "architecture_layers", "build_model", "check_model_gradients", "cross_entropy", "evaluate",
    "one_hot", "train",
]
