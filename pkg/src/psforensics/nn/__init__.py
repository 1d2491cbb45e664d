"""Small NCHW autodiff engine: just the layers the three detectors need."""

from . import functional
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .gradcheck import GradcheckResult, gradcheck, gradcheck_detail
from .layers import (
    ConstrainedConv2d,
    Conv2d,
    DegenerateFilterError,
    Flatten,
    GlobalAvgPool,
    Linear,
    MaxPool2d,
    Module,
    Parameter,
    ReLU,
    Scale,
    SeparableConv2d,
    Sequential,
    constrained_projection,
    constraint_violation,
)
from .optim import SGD, TrainConfig, bayar_train_config, clip_gradients, lr_schedule, sgd_step
from .tensor import NonFiniteError, Tensor

__all__ = [
    "functional", "CheckpointError", "load_checkpoint", "save_checkpoint", "gradcheck",
    "gradcheck_detail", "GradcheckResult",
    "ConstrainedConv2d", "Conv2d", "DegenerateFilterError", "Flatten", "GlobalAvgPool",
    "Linear", "MaxPool2d", "Module", "Parameter", "ReLU", "Scale", "SeparableConv2d",
    "Sequential", "constrained_projection", "constraint_violation", "SGD", "TrainConfig",
    "bayar_train_config", "clip_gradients", "lr_schedule", "sgd_step", "NonFiniteError", "Tensor",
]
