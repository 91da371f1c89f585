"""Guidance construction: masked frames, symmetry axis, guide images.

For every occluded frame two guidance images are built:

* the symmetric guide: the frame with each occluded pixel replaced by its
  horizontal mirror about an estimated symmetry axis, when that mirror pixel
  is visible;
* the past guide: the most recent earlier frame whose occlusion coverage is
  negligible, falling back to the symmetric guide when no such frame exists.

Frame positions in this module's API are 1-based: ``t = 1`` is the first
frame of the sequence, and the past search for ``t = 1`` is always empty.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import VideoSequence
from .errors import ContractError, GuidanceError
from .numerics import Tensor

DEFAULT_UNOBSTRUCTED = 0.01  # coverage below this counts as "clean"


@dataclass
class MaskedFrame:
    """Visible context of a frame: occluded pixels zeroed, mask kept."""

    context: Tensor
    mask: Tensor

    def __post_init__(self):
        if (self.context.data * self.mask.data != 0.0).any():
            raise ContractError("context must vanish inside the occlusion")


@dataclass
class GuidancePair:
    """The two guide images for one frame.

    ``past_index`` is the 1-based source frame of the past guide, or None
    when ``fallback_used`` is set, in which case ``past`` duplicates
    ``symmetric``.
    """

    symmetric: Tensor
    past: Tensor
    past_index: int | None
    fallback_used: bool


def make_masked_frame(frame: Tensor, mask: Tensor) -> MaskedFrame:
    """Zero out occluded pixels: context = (1 - m) * v."""
    if frame.ndim != 3 or mask.shape != (1,) + frame.shape[1:]:
        raise ContractError(f"shape mismatch: frame {frame.shape}, mask {mask.shape}")
    if not np.isin(np.unique(mask.data), (0.0, 1.0)).all():
        raise ContractError("mask must be exactly binary")
    context = frame.data * (1.0 - mask.data)
    return MaskedFrame(context=Tensor(context), mask=mask)


def mirror_columns(axis: int, p: int) -> np.ndarray:
    """Mirror partner column index for each column: j = 2*axis - i.

    Out-of-frame partners keep their (invalid) value; callers mask them.
    Applying the map twice is the identity wherever both hops stay in frame.
    """
    return 2 * axis - np.arange(p)


def estimate_symmetry_axis(frame: Tensor, mask: Tensor) -> int:
    """Estimate the vertical symmetry axis column of a partially masked frame.

    Scans candidate columns in [p/4, 3p/4] and scores each by the mean
    squared difference over pixel pairs (i, 2a-i) where both pixels are
    visible.  Ties break toward the frame center, then leftward.
    """
    c, p, _ = frame.shape
    free = mask.data[0] == 0.0
    if free.mean() < 0.25:
        raise GuidanceError(
            f"only {free.mean():.0%} of pixels visible; need at least 25%"
        )
    data = frame.data.astype(np.float64)
    cols = np.arange(p)
    best = None
    for a in range(p // 4, 3 * p // 4 + 1):
        partner = 2 * a - cols
        sel = (partner >= 0) & (partner < p) & (cols < partner)
        i_idx, j_idx = cols[sel], partner[sel]
        both = free[:, i_idx] & free[:, j_idx]
        n = int(both.sum())
        if n == 0:
            continue
        diff = data[:, :, i_idx] - data[:, :, j_idx]
        mse = float((diff * diff * both[None]).sum()) / (c * n)
        key = (mse, abs(a - p // 2), a)
        if best is None or key < best:
            best = key
    if best is None:
        raise GuidanceError("no candidate axis has a visible pixel pair")
    return best[2]


def make_symmetric_guide(frame: Tensor, mask: Tensor, axis: int) -> Tensor:
    """Fill occluded pixels from their mirror partners about ``axis``.

    Visible pixels pass through.  An occluded pixel whose partner is
    occluded too, or falls outside the frame, becomes 0.
    """
    c, p, _ = frame.shape
    if not (p // 4 <= axis <= 3 * p // 4):
        raise ContractError(f"axis {axis} outside [{p // 4}, {3 * p // 4}]")
    partner = mirror_columns(axis, p)
    in_frame = (partner >= 0) & (partner < p)
    safe = np.clip(partner, 0, p - 1)
    free = mask.data[0] == 0.0
    partner_visible = free[:, safe] & in_frame[None, :]
    occluded = mask.data[0] == 1.0

    guide = frame.data.copy()
    mirrored = frame.data[:, :, safe]
    fill = occluded & partner_visible
    dead = occluded & ~partner_visible
    guide[:, fill] = mirrored[:, fill]
    guide[:, dead] = 0.0
    return Tensor(guide)


def find_past_unobstructed(v: VideoSequence, t: int,
                           threshold: float = DEFAULT_UNOBSTRUCTED):
    """Most recent frame before ``t`` with coverage below ``threshold``.

    Returns (index, fallback_used); index is 1-based and None when every
    earlier frame is occluded (or t is the first frame).
    """
    if not (1 <= t <= len(v)):
        raise ContractError(f"frame position {t} outside 1..{len(v)}")
    for tb in range(t - 1, 0, -1):
        if v.coverage(tb - 1) < threshold:
            return tb, False
    return None, True


def build_guidance(v: VideoSequence, t: int,
                   threshold: float = DEFAULT_UNOBSTRUCTED) -> GuidancePair:
    """Build both guide images for occluded frame ``t`` (1-based)."""
    if not (1 <= t <= len(v)):
        raise ContractError(f"frame position {t} outside 1..{len(v)}")
    frame, mask = v.frames[t - 1], v.masks[t - 1]
    if v.coverage(t - 1) == 0.0:
        raise ContractError(f"frame {t} has no occlusion; guides are undefined")
    axis = estimate_symmetry_axis(frame, mask)
    symmetric = make_symmetric_guide(frame, mask, axis)
    past_index, fallback = find_past_unobstructed(v, t, threshold)
    if fallback:
        past = Tensor(symmetric.data.copy())
    else:
        past = v.frames[past_index - 1]
    return GuidancePair(symmetric=symmetric, past=past,
                        past_index=past_index, fallback_used=fallback)


def build_training_guides(v: VideoSequence,
                          threshold: float = DEFAULT_UNOBSTRUCTED) -> list:
    """Guide pairs for every frame of a clip, clean frames included.

    An unoccluded frame has nothing to reconstruct, so it serves as its own
    symmetric guide; its past guide follows the usual backward search.  This
    keeps training batches rectangular without special-casing clean frames
    in the network.
    """
    out = []
    for t in range(1, len(v) + 1):
        if v.coverage(t - 1) > 0.0:
            out.append(build_guidance(v, t, threshold))
            continue
        frame = v.frames[t - 1]
        past_index, fallback = find_past_unobstructed(v, t, threshold)
        past = frame if fallback else v.frames[past_index - 1]
        out.append(GuidancePair(symmetric=frame, past=past,
                                past_index=past_index, fallback_used=fallback))
    return out
