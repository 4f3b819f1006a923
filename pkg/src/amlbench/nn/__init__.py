"""Small numpy autodiff core: tensors, layers, optimizer, loss, checkpoints."""

from .checkpoint import load_checkpoint, save_checkpoint
from .layers import Linear, MlpDecoder, Module, mlp_forward
from .losses import class_weights_from, masked_cross_entropy
from .optim import Adam, adam_step
from .tensor import Tensor, backward, parameter

__all__ = [
    "Adam", "Linear", "MlpDecoder", "Module", "Tensor", "adam_step", "backward",
    "class_weights_from", "load_checkpoint", "masked_cross_entropy", "mlp_forward",
    "parameter", "save_checkpoint",
]
