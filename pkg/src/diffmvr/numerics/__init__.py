"""Array math: tensors with reverse-mode autodiff, deterministic RNG, Adam."""

from .ops import concat, conv2d, matmul, narrow, softmax, upsample2x
from .optim import Adam
from .rng import Rng
from .tensor import Tensor

__all__ = [
    "Adam",
    "Rng",
    "Tensor",
    "concat",
    "conv2d",
    "matmul",
    "narrow",
    "softmax",
    "upsample2x",
]
