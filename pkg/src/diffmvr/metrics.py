"""Evaluation battery: SSIM, temporal coherence, and Fréchet feature distances.

The Fréchet scores use this package's own guidance encoder as the feature
backbone and are labeled fid_proxy / fvd_proxy: the formula is the standard
one, but absolute values are not comparable to scores computed over
pretrained classification backbones.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .dataio import VideoSequence
from .errors import ContractError, DimensionError
from .models import encode_guidance
from .numerics import Tensor

WINDOW = 7
C1 = 0.01 ** 2
C2 = 0.03 ** 2
SHRINKAGE = 1e-6
VIDEO_FRAMES = 4


# ---------------------------------------------------------------------------
# SSIM


def _as_image(x, name: str) -> np.ndarray:
    arr = x.data if isinstance(x, Tensor) else np.asarray(x)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise DimensionError(f"{name} must be (c, h, w) or (h, w), got {arr.shape}")
    if arr.shape[1] < WINDOW or arr.shape[2] < WINDOW:
        raise ContractError(
            f"{name} extent {arr.shape[1:]} smaller than the {WINDOW}x{WINDOW} window"
        )
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ContractError(f"{name} values outside [0, 1]")
    return arr.astype(np.float64)


def _ssim_map(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-window SSIM, shape (c, h-6, w-6).  Uniform window moments."""
    wa = sliding_window_view(a, (WINDOW, WINDOW), axis=(1, 2))
    wb = sliding_window_view(b, (WINDOW, WINDOW), axis=(1, 2))
    mu_a = wa.mean(axis=(-1, -2))
    mu_b = wb.mean(axis=(-1, -2))
    var_a = (wa * wa).mean(axis=(-1, -2)) - mu_a * mu_a
    var_b = (wb * wb).mean(axis=(-1, -2)) - mu_b * mu_b
    cov = (wa * wb).mean(axis=(-1, -2)) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + C1) * (2.0 * cov + C2)
    den = (mu_a * mu_a + mu_b * mu_b + C1) * (var_a + var_b + C2)
    return num / den


def ssim(a, b) -> float:
    """Mean windowed SSIM over all valid windows and channels."""
    xa = _as_image(a, "a")
    xb = _as_image(b, "b")
    if xa.shape != xb.shape:
        raise DimensionError(f"shape mismatch: {xa.shape} vs {xb.shape}")
    return float(_ssim_map(xa, xb).mean())


def ssim_masked(a, b, mask) -> float:
    """SSIM averaged over windows whose footprint touches the occluded
    region; falls back to the full mean when the mask is empty."""
    xa = _as_image(a, "a")
    xb = _as_image(b, "b")
    if xa.shape != xb.shape:
        raise DimensionError(f"shape mismatch: {xa.shape} vs {xb.shape}")
    m = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
    if m.ndim == 3:
        m = m[0]
    if m.shape != xa.shape[1:]:
        raise DimensionError(f"mask shape {m.shape} != image {xa.shape[1:]}")
    smap = _ssim_map(xa, xb)
    hit = sliding_window_view(m, (WINDOW, WINDOW)).max(axis=(-1, -2)) > 0.0
    if not hit.any():
        return float(smap.mean())
    return float(smap[:, hit].mean())


# ---------------------------------------------------------------------------
# Temporal coherence


def tc_score(v: VideoSequence) -> float:
    """Mean over consecutive pairs of RMS pixel difference on the union of
    the two frames' occluded regions (whole frame for mask-free pairs).
    Lower is smoother."""
    if len(v) < 2:
        raise ContractError(f"temporal coherence needs >= 2 frames, got {len(v)}")
    scores = []
    for i in range(1, len(v)):
        d = v.frames[i].data.astype(np.float64) - v.frames[i - 1].data.astype(np.float64)
        union = (v.masks[i].data[0] > 0.0) | (v.masks[i - 1].data[0] > 0.0)
        region = d[:, union] if union.any() else d
        scores.append(np.sqrt(np.mean(region * region)))
    return float(np.mean(scores))


# ---------------------------------------------------------------------------
# Fréchet feature distance


def _moments(x: np.ndarray) -> tuple:
    n, d = x.shape
    mu = x.mean(axis=0)
    if n >= 2:
        centered = x - mu
        cov = centered.T @ centered / (n - 1)
    else:
        cov = np.zeros((d, d))
    if n < d + 1:
        cov = cov + SHRINKAGE * np.eye(d)
    return mu, cov


def _sqrtm(sym: np.ndarray) -> np.ndarray:
    """Square root of a symmetric PSD matrix; negative modes clamp to 0."""
    vals, vecs = np.linalg.eigh(sym)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def frechet_distance(feats_a, feats_b) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2))."""
    a = _as_features(feats_a, "feats_a")
    b = _as_features(feats_b, "feats_b")
    if a.shape[1] != b.shape[1]:
        raise DimensionError(
            f"feature widths differ: {a.shape[1]} vs {b.shape[1]}"
        )
    mu_a, cov_a = _moments(a)
    mu_b, cov_b = _moments(b)
    diff = mu_a - mu_b
    root_a = _sqrtm(cov_a)
    inner = root_a @ cov_b @ root_a
    cross = np.sqrt(np.clip(np.linalg.eigvalsh(inner), 0.0, None)).sum()
    dist = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * cross)
    return max(dist, 0.0)


def _as_features(feats, name: str) -> np.ndarray:
    arr = np.asarray(feats, dtype=np.float64)
    if arr.size == 0:
        raise ContractError(f"{name} is empty")
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be (n, d), got {arr.shape}")
    return arr


# ---------------------------------------------------------------------------
# Feature extraction


def _embed(params, frame: Tensor) -> np.ndarray:
    return encode_guidance(params, frame, "symmetric").data.astype(np.float64)


def extract_features(items, params, level: str = "frame",
                     video_frames: int = VIDEO_FRAMES) -> np.ndarray:
    """Feature matrix from the symmetric-guide encoder.

    ``items`` holds VideoSequences (or bare frame tensors at frame level).
    Frame level yields one p_e row per frame; video level concatenates the
    embeddings of ``video_frames`` evenly strided frames per clip.
    """
    if level not in ("frame", "video"):
        raise ContractError(f"unknown feature level {level!r}")
    if not items:
        raise ContractError("nothing to featurize")
    flags = [(p, p.requires_grad) for p in params.parameters()]
    for p, _ in flags:
        p.requires_grad = False
    try:
        rows = []
        for item in items:
            if level == "frame":
                frames = item.frames if isinstance(item, VideoSequence) else [item]
                rows.extend(_embed(params, f) for f in frames)
            else:
                if not isinstance(item, VideoSequence):
                    raise ContractError("video level needs VideoSequence items")
                idx = np.linspace(0, len(item) - 1, video_frames).round().astype(int)
                rows.append(np.concatenate([_embed(params, item.frames[i])
                                            for i in idx]))
        return np.stack(rows)
    finally:
        for p, flag in flags:
            p.requires_grad = flag


# ---------------------------------------------------------------------------
# Reports


@dataclass
class ClipScores:
    clip_id: str
    ssim: float
    ssim_masked: float
    tc: float
    tc_truth: float
    fid_proxy: float
    fvd_proxy: float

    def __post_init__(self):
        if not -1.0 <= self.ssim <= 1.0 or not -1.0 <= self.ssim_masked <= 1.0:
            raise ContractError(f"ssim outside [-1, 1] for clip {self.clip_id!r}")
        if self.tc < 0.0 or self.tc_truth < 0.0:
            raise ContractError(f"negative tc for clip {self.clip_id!r}")
        if not np.isnan(self.fid_proxy) and self.fid_proxy < 0.0:
            raise ContractError(f"negative fid_proxy for clip {self.clip_id!r}")
        if not np.isnan(self.fvd_proxy) and self.fvd_proxy < 0.0:
            raise ContractError(f"negative fvd_proxy for clip {self.clip_id!r}")


_COLUMNS = ("fid_proxy", "ssim", "ssim_masked", "tc", "tc_truth", "fvd_proxy")


@dataclass
class MetricReport:
    rows: list
    aggregate: dict
    fingerprint: str = ""

    def to_csv(self, path) -> None:
        lines = ["clip_id," + ",".join(_COLUMNS)]
        for r in self.rows + [self._aggregate_row()]:
            cells = [f"{getattr(r, c):.9g}" for c in _COLUMNS]
            lines.append(",".join([r.clip_id] + cells))
        lines.append(f"# fingerprint={self.fingerprint}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    def _aggregate_row(self) -> ClipScores:
        return ClipScores(clip_id="aggregate", **self.aggregate)

    def table(self) -> str:
        """Human-readable table; Fréchet first, then similarity, then motion."""
        header = ["clip"] + list(_COLUMNS)
        body = [[r.clip_id] + [f"{getattr(r, c):.4f}" for c in _COLUMNS]
                for r in self.rows + [self._aggregate_row()]]
        widths = [max(len(row[i]) for row in [header] + body)
                  for i in range(len(header))]
        fmt = "  ".join(f"{{:<{w}}}" for w in widths)
        out = [fmt.format(*header), fmt.format(*["-" * w for w in widths])]
        out += [fmt.format(*row) for row in body]
        return "\n".join(out)


def _metric_fingerprint(n_clips: int, p_e: int) -> str:
    digest = hashlib.sha256()
    digest.update(f"{WINDOW},{C1},{C2},{SHRINKAGE},{VIDEO_FRAMES},"
                  f"{n_clips},{p_e}".encode())
    return digest.hexdigest()[:16]


def _check_aligned(inpainted: VideoSequence, truth: VideoSequence, masks) -> None:
    if len(inpainted) != len(truth) or len(masks) != len(inpainted):
        raise ContractError(
            f"misaligned lengths: {len(inpainted)} frames, {len(truth)} truth, "
            f"{len(masks)} masks"
        )
    for f, g in zip(inpainted.frames, truth.frames):
        if f.shape != g.shape:
            raise ContractError(f"frame shape {f.shape} != truth {g.shape}")


def evaluate(inpainted: VideoSequence, truth: VideoSequence, masks,
             params=None, clip_id: str = "") -> ClipScores:
    """Score one clip against its ground truth.

    Fréchet scores need encoder ``params``; without them the proxies are NaN.
    Masked SSIM averages over occluded frames only (all frames when the clip
    has no occlusion).
    """
    _check_aligned(inpainted, truth, masks)
    ssims, masked = [], []
    for f, g, m in zip(inpainted.frames, truth.frames, masks):
        ssims.append(ssim(f, g))
        if float(m.data.max()) > 0.0:
            masked.append(ssim_masked(f, g, m))
    tc_in = tc_score(VideoSequence(frames=inpainted.frames, masks=list(masks),
                                   truth=None, fps=inpainted.fps))
    tc_ref = tc_score(VideoSequence(frames=truth.frames, masks=list(masks),
                                    truth=None, fps=inpainted.fps))
    fid = fvd = float("nan")
    if params is not None:
        fa = extract_features([inpainted], params, "frame")
        fb = extract_features([truth], params, "frame")
        fid = frechet_distance(fa, fb)
        va = extract_features([inpainted], params, "video")
        vb = extract_features([truth], params, "video")
        fvd = frechet_distance(va, vb)
    return ClipScores(clip_id=clip_id, ssim=float(np.mean(ssims)),
                      ssim_masked=float(np.mean(masked if masked else ssims)),
                      tc=tc_in, tc_truth=tc_ref, fid_proxy=fid, fvd_proxy=fvd)


def evaluate_set(pairs, params=None) -> MetricReport:
    """Score a held-out set; ``pairs`` holds (clip_id, inpainted, truth) with
    the inpainted sequence carrying the masks.

    Per-clip rows follow evaluate(); the aggregate pools every frame (and
    every clip vector) into one Fréchet comparison instead of averaging the
    shrinkage-dominated per-clip values.
    """
    if not pairs:
        raise ContractError("empty evaluation set")
    rows = []
    for clip_id, inpainted, truth in pairs:
        rows.append(evaluate(inpainted, truth, inpainted.masks, params, clip_id))
    agg = {
        "ssim": float(np.mean([r.ssim for r in rows])),
        "ssim_masked": float(np.mean([r.ssim_masked for r in rows])),
        "tc": float(np.mean([r.tc for r in rows])),
        "tc_truth": float(np.mean([r.tc_truth for r in rows])),
        "fid_proxy": float("nan"),
        "fvd_proxy": float("nan"),
    }
    p_e = 0
    if params is not None:
        p_e = params.config.p_e
        inp = [seq for _, seq, _ in pairs]
        ref = [seq for _, _, seq in pairs]
        agg["fid_proxy"] = frechet_distance(
            extract_features(inp, params, "frame"),
            extract_features(ref, params, "frame"))
        agg["fvd_proxy"] = frechet_distance(
            extract_features(inp, params, "video"),
            extract_features(ref, params, "video"))
    return MetricReport(rows=rows, aggregate=agg,
                        fingerprint=_metric_fingerprint(len(rows), p_e))
