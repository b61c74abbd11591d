"""Minimal float64 tensor library with reverse-mode autodiff."""
from .layers import (
    avgpool2d, batchnorm, bce_loss, conv2d, dense, dropout, global_avg_pool, relu, sigmoid,
)
from .params import (
    CheckpointError, Parameters, decode_checkpoint, encode_checkpoint, load_checkpoint,
    save_checkpoint,
)
from .spec import ConfigError, LayerSpec
from .tensor import ShapeError, Tensor, UsageError, add, mul, no_grad, tsum

__all__ = [
    "Tensor", "no_grad", "ShapeError", "UsageError", "add", "mul", "tsum",
    "conv2d", "batchnorm", "relu", "avgpool2d", "global_avg_pool", "dense", "dropout",
    "sigmoid", "bce_loss", "LayerSpec", "ConfigError", "Parameters", "CheckpointError",
    "encode_checkpoint", "decode_checkpoint", "save_checkpoint", "load_checkpoint",
]
