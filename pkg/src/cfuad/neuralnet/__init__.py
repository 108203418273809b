from .layers import (BatchNorm, Conv2D, Flatten, Linear, ReLU, bce_loss, bce_with_logits,
                     conv_output_size, glorot_uniform, relu, sigmoid)
from .network import Network, fit_input_scale
from .optim import AdamState, adam_step
from .training import TrainConfig, evaluate_loss, train, write_loss_csv

__all__ = [
    "AdamState", "BatchNorm", "Conv2D", "Flatten", "Linear", "Network", "ReLU", "TrainConfig",
    "adam_step", "bce_loss", "bce_with_logits", "conv_output_size", "evaluate_loss",
    "fit_input_scale", "glorot_uniform", "relu", "sigmoid", "train", "write_loss_csv",
]
