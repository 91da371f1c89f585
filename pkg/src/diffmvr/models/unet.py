"""Denoising U-Net over 4x8x8 latents with fused dual cross-attention.

Two resolution levels (8x8 and 4x4) plus a bottleneck; every level applies
cross-attention against the frame's guidance tokens.  Conditioning enters as
extra input channels: the masked-frame latent and the pooled mask.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError, DimensionError
from ..numerics import Tensor, concat, upsample2x
from .attention import CrossAttentionBlock
from .layers import Conv2d, GroupNorm, Linear, Module, timestep_embedding
from .vae import LATENT_CHANNELS, LatentMap


@dataclass
class MaskedLatentCond:
    """Per-frame conditioning: context latent plus the pooled occlusion mask."""

    context: Tensor
    mask: Tensor

    def __post_init__(self):
        if self.context.ndim != 3 or self.context.shape[0] != LATENT_CHANNELS:
            raise DimensionError(f"bad context latent shape {self.context.shape}")
        if self.mask.shape != (1,) + self.context.shape[1:]:
            raise DimensionError(
                f"mask shape {self.mask.shape} does not match latent grid"
            )


def pool_mask(mask: np.ndarray, factor: int = 4) -> Tensor:
    """Average-pool a (p, p) binary mask down to the latent grid, (1, pz, pz)."""
    arr = np.asarray(mask, dtype=np.float32)
    if arr.ndim != 2 or arr.shape[0] % factor or arr.shape[1] % factor:
        raise DimensionError(f"mask shape {arr.shape} not poolable by {factor}")
    h, w = arr.shape[0] // factor, arr.shape[1] // factor
    pooled = arr.reshape(h, factor, w, factor).mean(axis=(1, 3))
    return Tensor(pooled.reshape(1, h, w))


class ResBlock(Module):
    """Two 3x3 convs with group norm, SiLU and an additive timestep shift."""

    def __init__(self, rng, c_in: int, c_out: int, temb_dim: int):
        self.n1 = GroupNorm(c_in)
        self.c1 = Conv2d(rng, c_in, c_out, pad=1)
        self.t = Linear(rng, temb_dim, c_out)
        self.n2 = GroupNorm(c_out)
        # Zero-started second conv makes the block an identity at init.
        self.c2 = Conv2d(rng, c_out, c_out, pad=1, zero_init=True)
        self.skip = Conv2d(rng, c_in, c_out, k=1, pad=0) if c_in != c_out else None

    def __call__(self, x: Tensor, temb: Tensor) -> Tensor:
        h = self.c1(self.n1(x).silu())
        h = h + self.t(temb).reshape(-1, 1, 1)
        h = self.c2(self.n2(h).silu())
        s = x if self.skip is None else self.skip(x)
        return s + h


class DenoiserUNet(Module):
    def __init__(self, rng, t_max: int = 50, temb_dim: int = 32,
                 temb_hidden: int = 64, d: int = 32, base: int = 16):
        self.temb1 = Linear(rng, temb_dim, temb_hidden)
        self.temb2 = Linear(rng, temb_hidden, temb_hidden)
        self.stem = Conv2d(rng, 2 * LATENT_CHANNELS + 1, base, pad=1)
        self.d1_res = ResBlock(rng, base, base, temb_hidden)
        self.d1_att = CrossAttentionBlock(rng, base, d)
        self.down = Conv2d(rng, base, 2 * base, stride=2, pad=1)
        self.d2_res = ResBlock(rng, 2 * base, 2 * base, temb_hidden)
        self.d2_att = CrossAttentionBlock(rng, 2 * base, d)
        self.mid_res1 = ResBlock(rng, 2 * base, 2 * base, temb_hidden)
        self.mid_att = CrossAttentionBlock(rng, 2 * base, d)
        self.mid_res2 = ResBlock(rng, 2 * base, 2 * base, temb_hidden)
        self.u1_res = ResBlock(rng, 3 * base, base, temb_hidden)
        self.u1_att = CrossAttentionBlock(rng, base, d)
        self.head_norm = GroupNorm(base)
        self.head = Conv2d(rng, base, LATENT_CHANNELS, pad=1, zero_init=True)
        self._t_max = t_max
        self._temb_dim = temb_dim

    @property
    def t_max(self) -> int:
        return self._t_max

    def __call__(self, y: Tensor, t_step: int, cond: MaskedLatentCond,
                 tok1, tok2, alpha1: float, alpha2: float) -> Tensor:
        emb = timestep_embedding(t_step, self._temb_dim, dtype=self.temb1.w.dtype)
        emb = self.temb2(self.temb1(emb).silu()).silu()
        x = concat([y, cond.context, cond.mask], axis=0)
        h1 = self.d1_att(self.d1_res(self.stem(x), emb), tok1, tok2, alpha1, alpha2)
        h2 = self.down(h1)
        h2 = self.d2_att(self.d2_res(h2, emb), tok1, tok2, alpha1, alpha2)
        m = self.mid_res1(h2, emb)
        m = self.mid_att(m, tok1, tok2, alpha1, alpha2)
        m = self.mid_res2(m, emb)
        c, h, w = m.shape
        up = upsample2x(m.reshape(1, c, h, w)).reshape(c, 2 * h, 2 * w)
        u = self.u1_res(concat([up, h1], axis=0), emb)
        u = self.u1_att(u, tok1, tok2, alpha1, alpha2)
        return self.head(self.head_norm(u).silu())


def unet_predict_noise(params, y: LatentMap, t_step: int, cond: MaskedLatentCond,
                       guides: tuple, occluded: bool = True) -> Tensor:
    """Predict the noise component of a noisy latent.

    ``guides`` is (symmetric tokens, past tokens); entries may be None only
    when the matching fusion weight is zero.  ``occluded`` marks frames whose
    mask is non-empty; those must come with usable guidance.
    """
    if not 1 <= t_step <= params.unet.t_max:
        raise ContractError(f"timestep {t_step} outside [1, {params.unet.t_max}]")
    tok1, tok2 = guides
    a1, a2 = params.alpha1, params.alpha2
    if occluded and (tok1 is None and a1 > 0.0 or tok2 is None and a2 > 0.0):
        raise ContractError("occluded frame without guidance tokens")
    return params.unet(y.values, t_step, cond, tok1, tok2, a1, a2)
