"""Neural primitives with manual backprop and optional compiled GRU kernels."""

from .base import Module, ShapeMismatchError, uniform_init
from .core import (Affine, Embedding, LayerNorm, PyramidContraction,
                   SoftmaxCrossEntropy, embed, log_softmax, output_length,
                   sigmoid, softmax)
from .gradcheck import GradCheckReport, grad_check
from .kernels import HAVE_COMPILED, active_kernel_name, get_kernel
from .optim import Adam, clip_grad_norm

__all__ = [
    "Module", "ShapeMismatchError", "uniform_init",
    "Affine", "Embedding", "LayerNorm", "PyramidContraction",
    "SoftmaxCrossEntropy", "embed", "log_softmax", "output_length",
    "sigmoid", "softmax",
    "GradCheckReport", "grad_check",
    "HAVE_COMPILED", "active_kernel_name", "get_kernel",
    "Adam", "clip_grad_norm",
]
