"""Small from-scratch CNN: layers, model graph, and Adam training loop."""

from .layers import (
    BatchNorm,
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    GlobalMaxPool,
    Layer,
    MaxPool2x2,
    ReLU,
    Softmax,
    layer_from_spec,
)
from .model import (
    ModelGraph,
    Prediction,
    build_model,
    count_params,
    forward,
    loss_and_grad,
    predict,
)
from .training import TrainConfig, train

__all__ = [
    "BatchNorm", "Conv2D", "Dense", "Dropout", "Flatten", "GlobalMaxPool",
    "Layer", "MaxPool2x2", "ReLU", "Softmax", "layer_from_spec",
    "ModelGraph", "Prediction", "build_model", "count_params", "forward",
    "loss_and_grad", "predict", "TrainConfig", "train",
]
