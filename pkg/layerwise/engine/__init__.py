"""Tensor arithmetic and reverse-mode differentiation"""

from layerwise.engine.gradcheck import grad_check
from layerwise.engine.ops import matmul, softmax, softmax_cross_entropy
from layerwise.engine.tape import GradientMap, Tape, Var, backward
from layerwise.engine.tensor import tensor

__all__ = [
    "GradientMap",
    "Tape",
    "Var",
    "backward",
    "grad_check",
    "matmul",
    "softmax",
    "softmax_cross_entropy",
    "tensor",
]
