from .layers import (
    Conv3x3,
    Dense,
    Flatten,
    GlobalAvgPool,
    InputShapeError,
    Layer,
    MaxPool2,
    ReLU,
)
from .losses import CROSS_ENTROPY, MSE, LossFunction
from .model import (
    Model,
    UnsupportedHeadError,
    grad_input,
    grad_params,
    per_class_log_prob_grads,
    softmax,
)
from .optim import SGD, DivergenceError, train_step
from .params import ParamVector

__all__ = [
    "CROSS_ENTROPY",
    "Conv3x3",
    "Dense",
    "DivergenceError",
    "Flatten",
    "GlobalAvgPool",
    "InputShapeError",
    "Layer",
    "LossFunction",
    "MSE",
    "MaxPool2",
    "Model",
    "ParamVector",
    "ReLU",
    "SGD",
    "UnsupportedHeadError",
    "grad_input",
    "grad_params",
    "per_class_log_prob_grads",
    "softmax",
    "train_step",
]
