"""Tiny convolutional VAE mapping 32x32 RGB frames to 4x8x8 latent maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, ContractError, DimensionError
from ..numerics import Tensor, upsample2x
from .layers import Conv2d, Module

LATENT_CHANNELS = 4
LATENT_STRIDE = 4


@dataclass
class LatentMap:
    """A spatial latent with bookkeeping about how it was produced.

    provenance is "clean" for encoder outputs and decoded-ready latents,
    "noisy" for forward-diffused ones; noisy maps carry their timestep.
    """

    values: Tensor
    provenance: str
    timestep: int | None = None

    def __post_init__(self):
        if self.provenance not in ("clean", "noisy"):
            raise ContractError(f"unknown latent provenance {self.provenance!r}")
        if self.values.ndim != 3 or self.values.shape[0] != LATENT_CHANNELS:
            raise DimensionError(
                f"latent must be ({LATENT_CHANNELS}, p_z, p_z), got {self.values.shape}"
            )
        if self.provenance == "noisy" and self.timestep is None:
            raise ContractError("noisy latent without a timestep")


class VaeEncoder(Module):
    def __init__(self, rng, base: int = 16):
        self.c1 = Conv2d(rng, 3, base, stride=2, pad=1)
        self.c2 = Conv2d(rng, base, 2 * base, stride=2, pad=1)
        self.mu = Conv2d(rng, 2 * base, LATENT_CHANNELS, pad=1)
        # Zero-started log-variance keeps early sampling at unit scale.
        self.logvar = Conv2d(rng, 2 * base, LATENT_CHANNELS, pad=1, zero_init=True)

    def __call__(self, frame: Tensor) -> tuple:
        h = self.c1(frame).silu()
        h = self.c2(h).silu()
        return self.mu(h), self.logvar(h)


class VaeDecoder(Module):
    def __init__(self, rng, base: int = 16):
        self.c1 = Conv2d(rng, LATENT_CHANNELS, 2 * base, pad=1)
        self.c2 = Conv2d(rng, 2 * base, base, pad=1)
        self.c3 = Conv2d(rng, base, base, pad=1)
        self.out = Conv2d(rng, base, 3, pad=1)

    def __call__(self, z: Tensor) -> Tensor:
        h = self.c1(z).silu()
        h = _up(h)
        h = self.c2(h).silu()
        h = _up(h)
        h = self.c3(h).silu()
        return self.out(h).sigmoid()


def _up(x: Tensor) -> Tensor:
    c, h, w = x.shape
    return upsample2x(x.reshape(1, c, h, w)).reshape(c, 2 * h, 2 * w)


class Vae(Module):
    def __init__(self, rng, base: int = 16):
        self.enc = VaeEncoder(rng.child(0), base)
        self.dec = VaeDecoder(rng.child(1), base)


def vae_encode(vae: Vae, frame: Tensor, mode: str = "deterministic",
               rng=None) -> LatentMap:
    """Encode a frame in [0, 1] to a clean latent map.

    "deterministic" returns the posterior mean; "sample" draws mu + sigma*eps
    with noise from ``rng``.
    """
    if frame.ndim != 3 or frame.shape[0] != 3:
        raise DimensionError(f"expected (3, p, p) frame, got {frame.shape}")
    if frame.data.min() < 0.0 or frame.data.max() > 1.0:
        raise ContractError("frame values outside [0, 1]")
    mu, logvar = vae.enc(frame)
    if mode == "deterministic":
        values = mu
    elif mode == "sample":
        if rng is None:
            raise ContractError("sampling mode needs an rng")
        eps = Tensor(rng.normal(mu.shape, dtype=np.float32))
        values = mu + (logvar * 0.5).exp() * eps
    else:
        raise ConfigError(f"unknown encode mode {mode!r}")
    return LatentMap(values=values, provenance="clean")


def vae_decode(vae: Vae, z: LatentMap) -> Tensor:
    """Decode a clean latent map to a frame; the sigmoid bounds it to [0, 1]."""
    if z.provenance != "clean":
        raise ContractError(f"decoder expects a clean latent, got {z.provenance!r}")
    return vae.dec(z.values)
