"""Noise schedule, forward/reverse diffusion, losses, training and inference.

Training runs one clip per step with a single shared timestep, so the motion
term compares like-noised latents.  Inference denoises each occluded frame
from a per-clip shared initial noise tensor and composites the decoded frame
into the original pixels.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataio import VideoSequence
from .errors import ConfigError, ContractError, DimensionError, NumericError
from .models import (
    LatentMap,
    MaskedLatentCond,
    ModelParams,
    guide_tokens,
    pool_mask,
    save_checkpoint,
    unet_predict_noise,
    vae_decode,
    vae_encode,
)
from .numerics import Adam, Rng, Tensor
from .preprocess import (
    DEFAULT_UNOBSTRUCTED,
    build_guidance,
    build_training_guides,
    make_masked_frame,
)

GUIDANCE_MODES = ("dual", "sym", "past", "present")


# ---------------------------------------------------------------------------
# Noise schedule


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear-beta schedule with 1-based timestep arrays.

    Index 0 is the boundary: beta[0] = 0, alpha_bar[0] = 1.  sigma[1] = 0
    makes the final reverse step deterministic.
    """

    t_max: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    sigma: np.ndarray

    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        digest.update(str(self.t_max).encode())
        digest.update(self.beta.astype("<f8").tobytes())
        return digest.hexdigest()[:16]


def build_schedule(t_max: int = 50, beta_start: float = 1e-4,
                   beta_end: float = 0.02) -> NoiseSchedule:
    """Linear beta interpolation over ``t_max`` steps."""
    if t_max < 1:
        raise ConfigError(f"t_max must be >= 1, got {t_max}")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigError(
            f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )
    beta = np.concatenate([[0.0], np.linspace(beta_start, beta_end, t_max)])
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    sigma = np.sqrt(beta)
    sigma[1] = 0.0
    if not (np.diff(alpha_bar) < 0.0).all():
        raise ConfigError("alpha_bar is not strictly decreasing")
    return NoiseSchedule(t_max=t_max, beta=beta, alpha=alpha,
                         alpha_bar=alpha_bar, sigma=sigma)


# ---------------------------------------------------------------------------
# Forward and reverse dynamics


def forward_diffuse(y: LatentMap, t_step: int, eps: Tensor,
                    sched: NoiseSchedule) -> LatentMap:
    """y_T = sqrt(abar_T)*y + sqrt(1-abar_T)*eps; T=0 returns y unchanged."""
    if y.provenance != "clean":
        raise ContractError("forward diffusion starts from a clean latent")
    if not 0 <= t_step <= sched.t_max:
        raise ContractError(f"timestep {t_step} outside [0, {sched.t_max}]")
    if eps.shape != y.values.shape:
        raise DimensionError(f"noise shape {eps.shape} != latent {y.values.shape}")
    if t_step == 0:
        return LatentMap(values=y.values, provenance="clean")
    abar = float(sched.alpha_bar[t_step])
    values = y.values * float(np.sqrt(abar)) + eps * float(np.sqrt(1.0 - abar))
    return LatentMap(values=values, provenance="noisy", timestep=t_step)


def reverse_step(y: LatentMap, t_step: int, eps_hat: Tensor,
                 sched: NoiseSchedule, z: Tensor | None = None) -> LatentMap:
    """One ancestral sampling step from T to T-1.

    y_{T-1} = (y_T - ((1-alpha_T)/sqrt(1-abar_T))*eps_hat) / sqrt(alpha_T)
              + sigma_T*z
    """
    if not 1 <= t_step <= sched.t_max:
        raise ContractError(f"timestep {t_step} outside [1, {sched.t_max}]")
    if y.provenance != "noisy" or y.timestep != t_step:
        raise ContractError(
            f"latent carries (provenance={y.provenance}, T={y.timestep}), "
            f"reverse step expects a noisy latent at T={t_step}"
        )
    if eps_hat.shape != y.values.shape:
        raise DimensionError(
            f"prediction shape {eps_hat.shape} != latent {y.values.shape}"
        )
    alpha = float(sched.alpha[t_step])
    abar = float(sched.alpha_bar[t_step])
    sigma = float(sched.sigma[t_step])
    coef = (1.0 - alpha) / float(np.sqrt(1.0 - abar))
    values = (y.values - eps_hat * coef) / float(np.sqrt(alpha))
    if sigma > 0.0:
        if z is None:
            raise ContractError(f"step at T={t_step} has sigma > 0 and needs z")
        if z.shape != y.values.shape:
            raise DimensionError(f"z shape {z.shape} != latent {y.values.shape}")
        values = values + z * sigma
    if t_step == 1:
        return LatentMap(values=values, provenance="clean")
    return LatentMap(values=values, provenance="noisy", timestep=t_step - 1)


# ---------------------------------------------------------------------------
# Clip batches and losses


@dataclass
class ClipBatch:
    """Per-frame training inputs for one contiguous clip window.

    All frames share one timestep (the motion term compares like-noised
    latents) and each frame carries its own target noise tensor.
    """

    latents: list
    conds: list
    guides: list
    t_shared: int
    eps: list
    clip_id: str = ""

    def __post_init__(self):
        n = len(self.latents)
        if n < 1:
            raise ContractError("empty clip batch")
        if not (len(self.conds) == len(self.guides) == len(self.eps) == n):
            raise ContractError("clip batch fields disagree on frame count")
        if self.t_shared < 1:
            raise ContractError(f"shared timestep must be >= 1, got {self.t_shared}")

    def __len__(self) -> int:
        return len(self.latents)


def _noised(batch: ClipBatch, sched: NoiseSchedule) -> list:
    return [forward_diffuse(lat, batch.t_shared, eps, sched)
            for lat, eps in zip(batch.latents, batch.eps)]


def loss_diff(batch: ClipBatch, params: ModelParams, sched: NoiseSchedule,
              predict=None) -> Tensor:
    """Mean over frames of the squared noise-prediction error."""
    if predict is None:
        def predict(y, t_step, cond, guides):
            return unet_predict_noise(params, y, t_step, cond, guides)
    total = None
    for lat, cond, guides, eps in zip(batch.latents, batch.conds,
                                      batch.guides, batch.eps):
        y = forward_diffuse(lat, batch.t_shared, eps, sched)
        resid = predict(y, batch.t_shared, cond, guides) - eps
        term = (resid * resid).sum()
        total = term if total is None else total + term
    return total * (1.0 / len(batch))


def loss_motion(batch: ClipBatch, sched: NoiseSchedule) -> Tensor:
    """(2/F) * sum over consecutive pairs of squared noisy-latent difference.

    Computed on the forward-noised latents themselves; with a frozen VAE the
    result is a constant of the batch (it regularizes the objective's value,
    not the gradient).
    """
    if len(batch) < 2:
        raise ContractError(f"motion loss needs >= 2 frames, got {len(batch)}")
    noised = _noised(batch, sched)
    total = None
    for prev, cur in zip(noised, noised[1:]):
        d = cur.values - prev.values
        term = (d * d).sum()
        total = term if total is None else total + term
    return total * (2.0 / len(batch))


def loss_total(batch: ClipBatch, params: ModelParams, sched: NoiseSchedule,
               motion_weight: float | None = None, predict=None) -> Tensor:
    """loss_diff + motion_weight * loss_motion (the weight defaults to the
    model's); a weight of exactly zero skips the motion term."""
    total, _, _ = _losses(batch, params, sched, motion_weight, predict)
    return total


def _losses(batch, params, sched, motion_weight=None, predict=None):
    lam = params.motion_weight if motion_weight is None else motion_weight
    if lam < 0.0:
        raise ContractError(f"motion weight must be >= 0, got {lam}")
    ld = loss_diff(batch, params, sched, predict)
    if lam == 0.0:
        return ld, ld, None
    lm = loss_motion(batch, sched)
    return ld + lm * lam, ld, lm


# ---------------------------------------------------------------------------
# Batch assembly


@dataclass
class _ClipCache:
    """Constant per-clip arrays reused across training steps."""

    clip_id: str
    latents: list
    contexts: list
    pooled: list
    sym_imgs: list
    past_imgs: list
    frame_imgs: list


def _cache_clip(params: ModelParams, clip_id: str, seq: VideoSequence,
                threshold: float = DEFAULT_UNOBSTRUCTED) -> _ClipCache:
    if seq.truth is None:
        raise ContractError(f"clip {clip_id!r} has no ground truth to train on")
    if seq.p != params.config.p:
        raise ContractError(
            f"clip extent {seq.p} != model extent {params.config.p}"
        )
    guides = build_training_guides(seq, threshold)
    latents, contexts, pooled, syms, pasts, frames = [], [], [], [], [], []
    for i in range(len(seq)):
        latents.append(vae_encode(params.vae, seq.truth[i]).values.data)
        masked = make_masked_frame(seq.frames[i], seq.masks[i])
        contexts.append(vae_encode(params.vae, masked.context).values.data)
        pooled.append(pool_mask(seq.masks[i].data[0]).data)
        syms.append(guides[i].symmetric.data)
        pasts.append(guides[i].past.data)
        frames.append(seq.frames[i].data)
    return _ClipCache(clip_id=clip_id, latents=latents, contexts=contexts,
                      pooled=pooled, sym_imgs=syms, past_imgs=pasts,
                      frame_imgs=frames)


def _slot_images(mode: str, cache: _ClipCache, i: int):
    if mode == "dual":
        return cache.sym_imgs[i], cache.past_imgs[i]
    if mode == "sym":
        return cache.sym_imgs[i], None
    if mode == "past":
        return None, cache.past_imgs[i]
    if mode == "present":
        return cache.frame_imgs[i], cache.frame_imgs[i]
    raise ConfigError(f"unknown guidance mode {mode!r}")


def _frame_tokens(params: ModelParams, mode: str, cache: _ClipCache, i: int):
    img1, img2 = _slot_images(mode, cache, i)
    if params.alpha1 == 0.0:
        img1 = None
    if params.alpha2 == 0.0:
        img2 = None
    tok1 = guide_tokens(params, Tensor(img1), "symmetric") if img1 is not None else None
    tok2 = guide_tokens(params, Tensor(img2), "past") if img2 is not None else None
    return tok1, tok2


def _assemble(params: ModelParams, cache: _ClipCache, mode: str,
              t_shared: int, eps: list) -> ClipBatch:
    n = len(cache.latents)
    if len(eps) != n:
        raise ContractError(f"{len(eps)} noise tensors for {n} frames")
    latents = [LatentMap(values=Tensor(v), provenance="clean")
               for v in cache.latents]
    conds = [MaskedLatentCond(context=Tensor(c), mask=Tensor(m))
             for c, m in zip(cache.contexts, cache.pooled)]
    guides = [_frame_tokens(params, mode, cache, i) for i in range(n)]
    return ClipBatch(latents=latents, conds=conds, guides=guides,
                     t_shared=t_shared, eps=eps, clip_id=cache.clip_id)


def prepare_batch(params: ModelParams, seq: VideoSequence, t_shared: int,
                  eps: list, guidance: str = "dual", clip_id: str = "") -> ClipBatch:
    """Build a training batch for one clip from scratch (uncached path)."""
    _check_mode(params, guidance)
    return _assemble(params, _cache_clip(params, clip_id, seq), guidance,
                     t_shared, eps)


def _check_mode(params: ModelParams, mode: str) -> None:
    if mode not in GUIDANCE_MODES:
        raise ConfigError(f"unknown guidance mode {mode!r}")
    if mode == "sym" and params.alpha2 != 0.0:
        raise ConfigError("single-symmetric mode needs fusion weights (1, 0)")
    if mode == "past" and params.alpha1 != 0.0:
        raise ConfigError("single-past mode needs fusion weights (0, 1)")
    if mode == "present" and (params.alpha1 == 0.0 or params.alpha2 == 0.0):
        raise ConfigError("single-present mode feeds both slots; weights must be > 0")


def _mode_parameters(params: ModelParams, mode: str) -> list:
    """Trainable parameters that actually receive gradients under ``mode``."""
    out = list(params.unet.parameters())
    img1_used = mode in ("dual", "sym", "present") and params.alpha1 > 0.0
    img2_used = mode in ("dual", "past", "present") and params.alpha2 > 0.0
    if img1_used:
        out += params.enc_sym.parameters() + params.proj_sym.parameters()
    if img2_used:
        out += params.enc_past.parameters() + params.proj_past.parameters()
    return [p for p in out if p.requires_grad]


# ---------------------------------------------------------------------------
# VAE pretraining


def pretrain_vae(clips: list, vae, steps: int, lr: float = 1e-3,
                 seed: int = 0, kl_weight: float = 1e-3) -> list:
    """Train the VAE on clean frames with MSE + KL; returns (step, loss) rows.

    ``clips`` holds (clip_id, VideoSequence) pairs; ground truth frames are
    preferred, occluded frames are the fallback for truth-free data.
    """
    if steps < 1:
        raise ConfigError(f"steps must be >= 1, got {steps}")
    frames = []
    for _, seq in clips:
        source = seq.truth if seq.truth is not None else seq.frames
        frames.extend(f.data for f in source)
    if not frames:
        raise ContractError("no frames to pretrain on")
    rng = Rng(seed)
    opt = Adam(vae.parameters(), lr=lr)
    rows = []
    for step in range(1, steps + 1):
        srng = rng.child(step)
        x = Tensor(frames[srng.integers(0, len(frames))])
        mu, logvar = vae.enc(x)
        noise = Tensor(srng.normal(mu.shape, dtype=np.float32))
        z = mu + (logvar * 0.5).exp() * noise
        rec = vae.dec(z)
        d = rec - x
        mse = (d * d).mean()
        kl = ((mu * mu + logvar.exp() - logvar - 1.0) * 0.5).mean()
        loss = mse + kl * kl_weight
        loss.backward()
        opt.step()
        opt.zero_grad()
        rows.append((step, float(loss.item())))
    return rows


# ---------------------------------------------------------------------------
# Training loop


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    lr: float = 1e-3
    seed: int = 0
    guidance: str = "dual"
    motion_loss: bool = True
    checkpoint_every: int = 500

    def validate(self) -> None:
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if self.lr < 0.0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if self.guidance not in GUIDANCE_MODES:
            raise ConfigError(f"unknown guidance mode {self.guidance!r}")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be >= 1")


@dataclass
class StepRecord:
    step: int
    t_shared: int
    clip_id: str
    loss_total: float
    loss_diff: float
    loss_motion: float


def _write_train_csv(rows: list, path) -> None:
    lines = ["step,loss_total,loss_diff,loss_motion"]
    lines += [f"{r.step},{r.loss_total:.9g},{r.loss_diff:.9g},{r.loss_motion:.9g}"
              for r in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_detail_csv(rows: list, path) -> None:
    lines = ["step,t_shared,clip_id"]
    lines += [f"{r.step},{r.t_shared},{r.clip_id}" for r in rows]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def train(clips: list, params: ModelParams, sched: NoiseSchedule,
          cfg: TrainConfig, out_dir) -> list:
    """Train the denoiser; returns StepRecords and writes logs + checkpoints.

    ``clips`` holds (clip_id, VideoSequence) pairs.  The VAE must already be
    pretrained and frozen.  Deterministic: every draw derives from cfg.seed.
    """
    cfg.validate()
    _check_mode(params, cfg.guidance)
    if not clips:
        raise ConfigError("no training clips")
    if any(p.requires_grad for p in params.vae.parameters()):
        raise ContractError("VAE must be frozen before diffusion training")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    caches = [_cache_clip(params, cid, seq) for cid, seq in clips]
    lat_shape = caches[0].latents[0].shape
    lam = params.motion_weight if cfg.motion_loss else 0.0
    opt = Adam(_mode_parameters(params, cfg.guidance), lr=cfg.lr)
    root = Rng(cfg.seed)
    meta = {
        "schedule_hash": sched.fingerprint(),
        "guidance": cfg.guidance,
        "motion_loss": cfg.motion_loss,
        "train_seed": cfg.seed,
    }
    rows: list = []
    for step in range(1, cfg.steps + 1):
        srng = root.child(step)
        cache = caches[srng.integers(0, len(caches))]
        t_shared = srng.integers(1, sched.t_max + 1)
        eps = [Tensor(srng.normal(lat_shape, dtype=np.float32))
               for _ in cache.latents]
        batch = _assemble(params, cache, cfg.guidance, t_shared, eps)
        try:
            total, ld, lm = _losses(batch, params, sched, lam)
            total.backward()
            opt.step()
        except NumericError as err:
            _dump_diagnostic(out, step, batch, err, rows)
            raise
        finally:
            opt.zero_grad()
        rows.append(StepRecord(step=step, t_shared=t_shared,
                               clip_id=batch.clip_id,
                               loss_total=float(total.item()),
                               loss_diff=float(ld.item()),
                               loss_motion=0.0 if lm is None else float(lm.item())))
        if step % cfg.checkpoint_every == 0 and step != cfg.steps:
            save_checkpoint(params, out / f"checkpoint_{step:05d}.ckpt",
                            extra={**meta, "step": step})
    save_checkpoint(params, out / "model.ckpt",
                    extra={**meta, "step": cfg.steps})
    _write_train_csv(rows, out / "train_log.csv")
    _write_detail_csv(rows, out / "train_detail.csv")
    return rows


def _dump_diagnostic(out: Path, step: int, batch: ClipBatch, err, rows) -> None:
    state = {
        "failed_step": step,
        "clip_id": batch.clip_id,
        "t_shared": batch.t_shared,
        "error": str(err),
        "recent": [dataclasses.asdict(r) for r in rows[-10:]],
    }
    (out / "diagnostic.json").write_text(
        json.dumps(state, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


# ---------------------------------------------------------------------------
# Inference


def inpaint_clip(seq: VideoSequence, params: ModelParams, sched: NoiseSchedule,
                 seed: int, guidance: str = "dual", share_noise: bool = True,
                 threshold: float = DEFAULT_UNOBSTRUCTED) -> VideoSequence:
    """Reverse-diffuse every occluded frame and composite into the original.

    Unoccluded frames pass through bitwise.  One initial noise tensor is
    shared by all frames of the clip (``share_noise=False`` draws per frame);
    per-frame step noise comes from frame-keyed child streams, so frames
    could be processed in any order.
    """
    _check_mode(params, guidance)
    if seq.p != params.config.p:
        raise ContractError(f"clip extent {seq.p} != model extent {params.config.p}")
    was_trainable = [(p, p.requires_grad) for p in params.parameters()]
    for p, _ in was_trainable:
        p.requires_grad = False
    try:
        return _inpaint_inner(seq, params, sched, seed, guidance,
                              share_noise, threshold)
    finally:
        for p, flag in was_trainable:
            p.requires_grad = flag


def _inpaint_inner(seq, params, sched, seed, guidance, share_noise, threshold):
    pz = params.config.p // 4
    lat_shape = (4, pz, pz)
    root = Rng(seed)
    shared0 = root.normal(lat_shape, dtype=np.float32)
    out_frames = []
    for t in range(1, len(seq) + 1):
        frame, mask = seq.frames[t - 1], seq.masks[t - 1]
        if seq.coverage(t - 1) == 0.0:
            out_frames.append(Tensor(frame.data.copy()))
            continue
        frng = root.child(t)
        start = shared0 if share_noise else frng.normal(lat_shape, dtype=np.float32)
        pair = build_guidance(seq, t, threshold)
        tok1, tok2 = _guide_pair_tokens(params, guidance, pair, frame)
        masked = make_masked_frame(frame, mask)
        cond = MaskedLatentCond(
            context=vae_encode(params.vae, masked.context).values,
            mask=pool_mask(mask.data[0]))
        y = LatentMap(values=Tensor(start.copy()), provenance="noisy",
                      timestep=sched.t_max)
        for t_step in range(sched.t_max, 0, -1):
            eps_hat = unet_predict_noise(params, y, t_step, cond, (tok1, tok2))
            z = None
            if sched.sigma[t_step] > 0.0:
                z = Tensor(frng.normal(lat_shape, dtype=np.float32))
            y = reverse_step(y, t_step, eps_hat, sched, z)
        decoded = vae_decode(params.vae, y)
        composite = np.where(mask.data.astype(bool), decoded.data, frame.data)
        out_frames.append(Tensor(composite))
    truth = None
    if seq.truth is not None:
        truth = [Tensor(g.data.copy()) for g in seq.truth]
    return VideoSequence(frames=out_frames,
                         masks=[Tensor(m.data.copy()) for m in seq.masks],
                         truth=truth, fps=seq.fps)


def _guide_pair_tokens(params, mode, pair, frame):
    if mode == "dual":
        img1, img2 = pair.symmetric, pair.past
    elif mode == "sym":
        img1, img2 = pair.symmetric, None
    elif mode == "past":
        img1, img2 = None, pair.past
    else:
        img1, img2 = frame, frame
    if params.alpha1 == 0.0:
        img1 = None
    if params.alpha2 == 0.0:
        img2 = None
    tok1 = guide_tokens(params, img1, "symmetric") if img1 is not None else None
    tok2 = guide_tokens(params, img2, "past") if img2 is not None else None
    return tok1, tok2
