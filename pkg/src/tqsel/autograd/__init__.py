"""Minimal numpy reverse-mode autodiff."""

from . import ops
from .checkpoint import load_checkpoint, load_tensors, save_checkpoint, save_tensors
from .gradcheck import GradCheckReport, grad_check
from .nn import Conv2d, DecoderBlock, EncoderBlock, LayerNorm, Linear, Module, MultiHeadAttention, Parameter
from .optim import Adam, adam_step
from .tensor import Tensor, build_tape, get_default_dtype, no_grad, set_default_dtype

__all__ = [
    "Adam", "Conv2d", "DecoderBlock", "EncoderBlock", "GradCheckReport", "LayerNorm", "Linear",
    "Module", "MultiHeadAttention", "Parameter", "Tensor", "adam_step", "build_tape",
    "get_default_dtype", "grad_check", "load_checkpoint", "load_tensors", "no_grad", "ops",
    "save_checkpoint", "save_tensors", "set_default_dtype",
]
