"""Guidance-image encoders and the MLP that expands embeddings into tokens.

Each guidance source (symmetric, past) owns a separate encoder and projector;
the attention layers consume their key/value tokens.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ContractError, DimensionError
from ..numerics import Tensor, narrow
from .layers import Conv2d, Linear, Module

SOURCES = ("symmetric", "past")


@dataclass
class GuidanceTokens:
    """k key tokens and k value tokens of shared width D for one source."""

    keys: Tensor
    values: Tensor
    source: str

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ContractError(f"unknown guidance source {self.source!r}")
        if self.keys.ndim != 2 or self.keys.shape != self.values.shape:
            raise DimensionError(
                f"token shapes differ: {self.keys.shape} vs {self.values.shape}"
            )
        if not (np.isfinite(self.keys.data).all() and np.isfinite(self.values.data).all()):
            raise ContractError("non-finite guidance tokens")


class GuidanceEncoder(Module):
    """Convolutional embedding of one guide image into a p_e-vector."""

    def __init__(self, rng, p: int = 32, p_e: int = 64):
        if p % 4 != 0:
            raise ConfigError(f"frame extent {p} not divisible by 4")
        self.c1 = Conv2d(rng, 3, 8, stride=2, pad=1)
        self.c2 = Conv2d(rng, 8, 16, stride=2, pad=1)
        self.fc = Linear(rng, 16 * (p // 4) ** 2, p_e)
        self._p = p

    def __call__(self, img: Tensor) -> Tensor:
        if img.ndim != 3 or img.shape != (3, self._p, self._p):
            raise DimensionError(f"expected (3, {self._p}, {self._p}), got {img.shape}")
        h = self.c1(img).silu()
        h = self.c2(h).silu()
        return self.fc(h.reshape(-1))


class TokenProjector(Module):
    """MLP from a p_e embedding to an expanded 2*k*D vector, split into tokens."""

    def __init__(self, rng, p_e: int = 64, hidden: int = 128, k: int = 8,
                 d: int = 32, p_expanded: int | None = None):
        if p_expanded is None:
            p_expanded = 2 * k * d
        if p_expanded != 2 * k * d:
            raise ConfigError(
                f"expanded width {p_expanded} does not factor as 2*{k}*{d}"
            )
        self.fc1 = Linear(rng, p_e, hidden)
        self.fc2 = Linear(rng, hidden, p_expanded)
        self._k = k
        self._d = d

    def __call__(self, z: Tensor, source: str) -> GuidanceTokens:
        if z.ndim != 1:
            raise DimensionError(f"embedding must be a vector, got shape {z.shape}")
        flat = self.fc2(self.fc1(z).silu()).reshape(1, -1)
        kd = self._k * self._d
        keys = narrow(flat, 1, 0, kd).reshape(self._k, self._d)
        values = narrow(flat, 1, kd, kd).reshape(self._k, self._d)
        return GuidanceTokens(keys=keys, values=values, source=source)


def encode_guidance(params, img: Tensor, source: str) -> Tensor:
    """Embed a guide image with the encoder owned by ``source``."""
    return params.encoder_for(source)(img)


def project_tokens(params, z: Tensor, source: str) -> GuidanceTokens:
    """Expand an embedding into key/value tokens with the source's projector."""
    return params.projector_for(source)(z, source)


def guide_tokens(params, img: Tensor, source: str) -> GuidanceTokens:
    """Convenience composition: tokens straight from a guide image."""
    return project_tokens(params, encode_guidance(params, img, source), source)
