"""Small network building blocks on top of the numerics package.

Everything here works on single unbatched feature maps (C, H, W) unless a
method says otherwise; clips are processed frame by frame.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, DimensionError
from ..numerics import Tensor, conv2d, matmul


class Module:
    """Base class that discovers parameters from instance attributes.

    Any attribute that is a Tensor counts as a parameter; Module-valued
    attributes and lists of Modules recurse.  Discovery order follows
    attribute assignment order, so it is stable across runs.
    """

    def named_parameters(self, prefix: str = ""):
        out = []
        for name, value in vars(self).items():
            if isinstance(value, Tensor):
                out.append((prefix + name, value))
            elif isinstance(value, Module):
                out.extend(value.named_parameters(prefix + name + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.extend(item.named_parameters(f"{prefix}{name}.{i}."))
                    elif isinstance(item, Tensor):
                        out.append((f"{prefix}{name}.{i}", item))
        return out

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def set_trainable(self, flag: bool) -> None:
        for p in self.parameters():
            p.requires_grad = flag


def _init_weight(rng, shape, fan_in: int, zero_init: bool) -> np.ndarray:
    if zero_init:
        return np.zeros(shape, dtype=np.float32)
    return rng.normal(shape, dtype=np.float32) * np.float32(np.sqrt(1.0 / fan_in))


class Linear(Module):
    """Affine map x @ w + b; accepts inputs of rank 1, 2 or 3."""

    def __init__(self, rng, d_in: int, d_out: int, zero_init: bool = False):
        self.w = Tensor(_init_weight(rng, (d_in, d_out), d_in, zero_init),
                        requires_grad=True)
        self.b = Tensor(np.zeros(d_out, dtype=np.float32), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim == 1:
            y = matmul(x.reshape(1, -1), self.w) + self.b
            return y.reshape(-1)
        return matmul(x, self.w) + self.b


class Conv2d(Module):
    """Learned 2-D cross-correlation with fixed stride/padding."""

    def __init__(self, rng, c_in: int, c_out: int, k: int = 3, stride: int = 1,
                 pad: int = 1, pad_mode: str = "reflect", zero_init: bool = False):
        fan_in = c_in * k * k
        self.w = Tensor(_init_weight(rng, (c_out, c_in, k, k), fan_in, zero_init),
                        requires_grad=True)
        self.b = Tensor(np.zeros(c_out, dtype=np.float32), requires_grad=True)
        self._stride = stride
        self._pad = pad
        self._pad_mode = pad_mode

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.w, self.b, stride=self._stride, pad=self._pad,
                      pad_mode=self._pad_mode)


class GroupNorm(Module):
    """Per-group standardization with a learned scale and shift.

    Built from primitive tensor ops so gradients flow through the
    normalization statistics as well.
    """

    def __init__(self, channels: int, groups: int = 4, eps: float = 1e-5):
        if channels % groups != 0:
            raise ConfigError(f"channels {channels} not divisible by {groups} groups")
        self.gamma = Tensor(np.ones(channels, dtype=np.float32), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=np.float32), requires_grad=True)
        self._groups = groups
        self._eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        if x.ndim != 3:
            raise DimensionError(f"group norm expects (C, H, W), got rank {x.ndim}")
        c, h, w = x.shape
        g = self._groups
        grouped = x.reshape(g, (c // g) * h * w)
        mu = grouped.mean(axis=1, keepdims=True)
        centered = grouped - mu
        var = (centered * centered).mean(axis=1, keepdims=True)
        norm = (centered / (var + self._eps).sqrt()).reshape(c, h, w)
        return norm * self.gamma.reshape(c, 1, 1) + self.beta.reshape(c, 1, 1)


def timestep_embedding(t_step: int, dim: int, dtype=np.float32) -> Tensor:
    """Sinusoidal features for an integer timestep, shape (dim,)."""
    if dim % 2 != 0:
        raise ConfigError(f"timestep embedding dim must be even, got {dim}")
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    ang = float(t_step) * freqs
    emb = np.concatenate([np.sin(ang), np.cos(ang)]).astype(dtype)
    return Tensor(emb)
