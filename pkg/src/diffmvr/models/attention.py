"""Fused dual cross-attention.

Each guidance source contributes one attention readout; the outputs are
blended with the fusion weights.  A weight of exactly zero skips its source
entirely, so a (1, 0) run is bit-identical to a single-guide network.
"""

from __future__ import annotations

import math

from ..errors import ContractError, DimensionError
from ..numerics import Tensor, matmul, softmax
from .guidance import GuidanceTokens
from .layers import GroupNorm, Linear, Module


def _attend(q: Tensor, tok: GuidanceTokens) -> Tensor:
    d = q.shape[-1]
    if tok.keys.shape[-1] != d:
        raise DimensionError(
            f"query width {d} != token width {tok.keys.shape[-1]}"
        )
    scores = matmul(q, tok.keys.swapaxes(0, 1)) * (1.0 / math.sqrt(d))
    return matmul(softmax(scores, axis=-1), tok.values)


def fused_attention(q: Tensor, tok1: GuidanceTokens, tok2: GuidanceTokens,
                    alpha1: float, alpha2: float) -> Tensor:
    """alpha1 * softmax(qK1'/sqrt(D))V1 + alpha2 * softmax(qK2'/sqrt(D))V2.

    ``q`` is (n_q, D).  Sources with weight exactly 0 are not evaluated, and
    a weight of exactly 1 applies no scaling, which keeps the (1, 0)
    degenerate case bitwise equal to the single-source computation.
    """
    if alpha1 < 0.0 or alpha2 < 0.0:
        raise ContractError(f"fusion weights must be >= 0, got {(alpha1, alpha2)}")
    if alpha1 == 0.0 and alpha2 == 0.0:
        raise ContractError("both fusion weights are zero")
    parts = []
    for alpha, tok in ((alpha1, tok1), (alpha2, tok2)):
        if alpha == 0.0:
            continue
        att = _attend(q, tok)
        parts.append(att if alpha == 1.0 else att * alpha)
    if len(parts) == 1:
        return parts[0]
    return parts[0] + parts[1]


class CrossAttentionBlock(Module):
    """Residual fused cross-attention over the flattened spatial grid.

    The output projection starts at zero, so the block is the identity at
    initialization.
    """

    def __init__(self, rng, channels: int, d: int = 32):
        self.norm = GroupNorm(channels)
        self.wq = Linear(rng, channels, d)
        self.wo = Linear(rng, d, channels, zero_init=True)

    def __call__(self, x: Tensor, tok1: GuidanceTokens, tok2: GuidanceTokens,
                 alpha1: float, alpha2: float) -> Tensor:
        c, h, w = x.shape
        q = self.wq(self.norm(x).reshape(c, h * w).swapaxes(0, 1))
        att = fused_attention(q, tok1, tok2, alpha1, alpha2)
        return x + self.wo(att).swapaxes(0, 1).reshape(c, h, w)
