"""Synthetic occluded-video generation and on-disk formats.

Clips are tiny videos of a textured, bilaterally symmetric disk ("face")
drifting over a horizontally uniform background, partially covered by a
moving occluder.  Because the object is exactly mirror-symmetric about its
own (integer) center column and the background is constant along rows, every
truth frame is pixel-exact symmetric, which turns guidance reconstruction
into an exactly checkable operation instead of an approximation.

Formats:

* raw tensors: magic ``VTEN1``, u8 rank, rank u32 little-endian extents,
  float32 little-endian row-major payload;
* frames: RGB8 PNG; masks: grayscale PNG with values {0, 255};
* manifests: UTF-8 lines ``clip_id<TAB>path<TAB>N<TAB>p``.
"""

from __future__ import annotations

import dataclasses
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, ContractError, FormatError
from .numerics import Rng, Tensor

_MAGIC = b"VTEN1"


# ---------------------------------------------------------------------------
# core containers


@dataclass
class VideoSequence:
    """Ordered frames with per-frame binary masks and optional ground truth.

    ``frames[i]`` is a (c, p, p) tensor with values in [0, 1]; ``masks[i]``
    is (1, p, p) with values in {0, 1} where 1 marks occluded pixels that
    need restoration.  ``truth``, when present, aligns index-for-index.
    """

    frames: list
    masks: list
    truth: list | None = None
    fps: float = 20.0

    def __post_init__(self):
        if len(self.frames) != len(self.masks):
            raise ContractError(
                f"{len(self.frames)} frames vs {len(self.masks)} masks"
            )
        if not self.frames:
            raise ContractError("empty video sequence")
        shape = self.frames[0].shape
        for f in self.frames:
            if f.shape != shape:
                raise ContractError("frames disagree on shape")
        c, p, q = shape
        if p != q:
            raise ContractError(f"frames must be square, got {p}x{q}")
        for m in self.masks:
            if m.shape != (1, p, p):
                raise ContractError(f"mask shape {m.shape} != (1, {p}, {p})")
            vals = np.unique(m.data)
            if not np.isin(vals, (0.0, 1.0)).all():
                raise ContractError("masks must be exactly binary")
        if self.truth is not None:
            if len(self.truth) != len(self.frames):
                raise ContractError("truth length differs from frames")
            for g in self.truth:
                if g.shape != shape:
                    raise ContractError("truth frames disagree on shape")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def p(self) -> int:
        return self.frames[0].shape[1]

    @property
    def channels(self) -> int:
        return self.frames[0].shape[0]

    def coverage(self, i: int) -> float:
        """Occluded fraction of frame i (0-based list position)."""
        return float(self.masks[i].data.mean())


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the synthetic clip generator.

    ``coverage`` gives the target occluded fraction per frame; at least one
    entry must fall below ``clean_threshold`` so every clip contains a frame
    usable as a past guide.
    """

    p: int = 32
    n_frames: int = 8
    channels: int = 3
    object_radius: int = 9
    drift_cols: int = 3
    drift_rows: int = 2
    occluder: str = "mix"  # "bar" | "ellipse" | "mix"
    coverage: tuple = (0.0, 0.18, 0.28, 0.34, 0.30, 0.24, 0.30, 0.36)
    clean_threshold: float = 0.01
    fps: float = 20.0
    seed: int = 0

    def validate(self) -> None:
        if self.p < 16 or self.p % 4 != 0:
            raise ConfigError(f"frame side must be a multiple of 4 and >= 16, got {self.p}")
        if self.channels != 3:
            raise ConfigError("only 3-channel frames are supported")
        if self.n_frames < 1:
            raise ConfigError("need at least one frame")
        if len(self.coverage) != self.n_frames:
            raise ConfigError(
                f"coverage schedule has {len(self.coverage)} entries for "
                f"{self.n_frames} frames"
            )
        for c in self.coverage:
            if not (0.0 <= c <= 0.9):
                raise ConfigError(f"coverage {c} outside [0, 0.9]")
        if min(self.coverage) >= self.clean_threshold:
            raise ConfigError(
                "coverage schedule never drops below the clean threshold; "
                "every clip needs at least one unobstructed frame"
            )
        if self.occluder not in ("bar", "ellipse", "mix"):
            raise ConfigError(f"unknown occluder kind {self.occluder!r}")
        margin = self.object_radius + max(self.drift_cols, self.drift_rows)
        if margin >= self.p // 2:
            raise ConfigError(
                f"object radius {self.object_radius} plus drift exceeds frame"
            )


# ---------------------------------------------------------------------------
# synthetic generation


def _render_object(truth: np.ndarray, row: int, col: int, radius: int,
                   base: np.ndarray, ring_period: float,
                   ring_phase: np.ndarray) -> None:
    """Paint the symmetric textured disk in place.

    Every painted value depends on the column only through |col - center|,
    so the object is exactly mirror-symmetric about its center column.
    """
    p = truth.shape[1]
    rows = np.arange(p)[:, None]
    cols = np.arange(p)[None, :]
    dy = rows - row
    dx = cols - col
    r2 = dx * dx + dy * dy
    inside = r2 <= radius * radius
    r = np.sqrt(r2.astype(np.float64))
    for ch in range(truth.shape[0]):
        tex = base[ch] + 0.22 * np.cos(2.0 * np.pi * r / ring_period + ring_phase[ch])
        truth[ch][inside] = tex[inside]
    # Eyes: a mirrored pair of dark dots.
    eye_dy, eye_dx, eye_r = -(radius // 3), radius // 2, max(radius // 4, 1)
    for sign in (-1, 1):
        er2 = (rows - (row + eye_dy)) ** 2 + (cols - (col + sign * eye_dx)) ** 2
        eye = er2 <= eye_r * eye_r
        for ch in range(truth.shape[0]):
            truth[ch][eye] *= 0.25
    # Mouth: a dark band symmetric in |dx|.
    mouth = (dy >= radius // 3) & (dy <= radius // 2) & (np.abs(dx) <= radius // 2)
    for ch in range(truth.shape[0]):
        truth[ch][mouth] *= 0.45
    np.clip(truth, 0.0, 1.0, out=truth)


def _bar_footprint(p: int, target: float, center: int) -> np.ndarray:
    width = int(round(target * p))
    mask = np.zeros((p, p), dtype=bool)
    if width <= 0:
        return mask
    width = min(width, p)
    left = center - width // 2
    left = max(0, min(left, p - width))
    mask[:, left : left + width] = True
    return mask


def _ellipse_footprint(p: int, target: float, row: int, col: int,
                       aspect: float) -> np.ndarray:
    mask = np.zeros((p, p), dtype=bool)
    want = int(round(target * p * p))
    if want <= 0:
        return mask
    rows = np.arange(p)[:, None] - row
    cols = np.arange(p)[None, :] - col
    # Continuous-area estimate, then a small discrete search on the minor
    # semi-axis so the pixel count lands within one pixel row of the target.
    b0 = np.sqrt(want / (np.pi * aspect))
    best, best_err = mask, want
    for db in np.arange(-2.0, 2.01, 0.2):
        b = max(b0 + db, 0.6)
        a = aspect * b
        cand = (cols / a) ** 2 + (rows / b) ** 2 <= 1.0
        err = abs(int(cand.sum()) - want)
        if err < best_err:
            best, best_err = cand, err
    return best


def generate_clip(cfg: SynthConfig) -> VideoSequence:
    """Generate one clip: truth frames, occluder masks, composited frames.

    Deterministic in ``cfg`` (including its seed).
    """
    cfg.validate()
    rng = Rng(cfg.seed)
    p, n = cfg.p, cfg.n_frames

    base = 0.35 + 0.3 * rng.uniform((3,))
    ring_period = 3.0 + 3.0 * rng.uniform()
    ring_phase = 2.0 * np.pi * rng.uniform((3,))
    g_top = 0.6 + 0.25 * rng.uniform((3,))
    g_bot = 0.6 + 0.25 * rng.uniform((3,))
    phase_c = 2.0 * np.pi * rng.uniform()
    phase_r = 2.0 * np.pi * rng.uniform()
    kind = cfg.occluder
    if kind == "mix":
        kind = "bar" if rng.uniform() < 0.5 else "ellipse"
    occ_amp = 2.0 + 3.0 * rng.uniform()
    occ_phase = 2.0 * np.pi * rng.uniform()
    aspect = 1.0 + rng.uniform()

    rows = np.arange(p, dtype=np.float64)[:, None]
    grad = rows / (p - 1)
    occ_rows = np.arange(p)[:, None]
    occ_cols = np.arange(p)[None, :]
    occ_tex = 0.08 + 0.10 * (((occ_rows + occ_cols) % 6) < 3)

    frames, masks, truths = [], [], []
    for t in range(n):
        angle = 2.0 * np.pi * t / n
        col = p // 2 + int(round(cfg.drift_cols * np.sin(angle + phase_c)))
        row = p // 2 + int(round(cfg.drift_rows * np.sin(angle + phase_r)))

        truth = np.empty((3, p, p), dtype=np.float64)
        for ch in range(3):
            truth[ch] = g_top[ch] + (g_bot[ch] - g_top[ch]) * grad
        _render_object(truth, row, col, cfg.object_radius, base, ring_period,
                       ring_phase)

        target = cfg.coverage[t]
        occ_center = p // 2 + int(round(occ_amp * np.sin(angle + occ_phase)))
        if kind == "bar":
            foot = _bar_footprint(p, target, occ_center)
        else:
            erow = max(4, min(p - 5, row + int(round(occ_amp * np.cos(angle + occ_phase)))))
            foot = _ellipse_footprint(p, target, erow, occ_center, aspect)

        frame = truth.copy()
        for ch in range(3):
            frame[ch][foot] = occ_tex[foot]

        frames.append(Tensor(frame.astype(np.float32)))
        masks.append(Tensor(foot[None].astype(np.float32)))
        truths.append(Tensor(truth.astype(np.float32)))

    return VideoSequence(frames=frames, masks=masks, truth=truths, fps=cfg.fps)


# ---------------------------------------------------------------------------
# raw tensor format


def encode_raw(t) -> bytes:
    """Serialize one tensor (or ndarray) as a VTEN1 record."""
    arr = t.data if isinstance(t, Tensor) else np.asarray(t)
    arr = np.ascontiguousarray(arr, dtype="<f4")
    if arr.ndim > 255:
        raise ContractError("rank exceeds format limit")
    header = _MAGIC + struct.pack("<B", arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.tobytes()


def decode_raw(blob: bytes, offset: int = 0, label: str = "blob") -> tuple:
    """Decode one VTEN1 record at ``offset``; returns (tensor, end offset)."""
    if len(blob) < offset + 6 or blob[offset : offset + 5] != _MAGIC:
        raise FormatError(f"{label}: no VTEN1 record at byte {offset}")
    rank = blob[offset + 5]
    data_off = offset + 6 + 4 * rank
    if len(blob) < data_off:
        raise FormatError(f"{label}: truncated header")
    shape = struct.unpack_from(f"<{rank}I", blob, offset + 6)
    count = int(np.prod(shape)) if rank else 1
    end = data_off + 4 * count
    if len(blob) < end:
        raise FormatError(
            f"{label}: payload holds {(len(blob) - data_off) // 4} values,"
            f" header says {count}"
        )
    arr = np.frombuffer(blob[data_off:end], dtype="<f4").reshape(shape)
    return Tensor(arr.copy()), end


def write_raw(t, path) -> None:
    """Write a tensor (or ndarray) as a VTEN1 file."""
    Path(path).write_bytes(encode_raw(t))


def read_raw(path) -> Tensor:
    """Read a VTEN1 file.  Round-trips with write_raw bit-exactly."""
    blob = Path(path).read_bytes()
    out, end = decode_raw(blob, 0, str(path))
    if end != len(blob):
        raise FormatError(f"{path}: {len(blob) - end} trailing bytes")
    return out


# ---------------------------------------------------------------------------
# PNG frames and masks


def _quantize(arr: np.ndarray) -> np.ndarray:
    # Round half up, documented: q = floor(255*v + 0.5).
    return np.floor(arr * 255.0 + 0.5).astype(np.uint8)


def write_frame_png(frame, path) -> None:
    arr = frame.data if isinstance(frame, Tensor) else np.asarray(frame)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ContractError(f"expected (3, p, p) frame, got {arr.shape}")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ContractError("frame values outside [0, 1]; refusing to clamp")
    Image.fromarray(_quantize(arr).transpose(1, 2, 0), "RGB").save(path, format="PNG")


def write_mask_png(mask, path) -> None:
    arr = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
    if arr.ndim == 3:
        arr = arr[0]
    vals = np.unique(arr)
    if not np.isin(vals, (0.0, 1.0)).all():
        raise ContractError("mask must be binary")
    Image.fromarray((arr * 255).astype(np.uint8), "L").save(path, format="PNG")


def read_frame_png(path) -> Tensor:
    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float32) / 255.0
    return Tensor(arr.transpose(2, 0, 1))


def read_mask_png(path) -> Tensor:
    arr = np.asarray(Image.open(path).convert("L"))
    if not np.isin(np.unique(arr), (0, 255)).all():
        raise FormatError(f"{path}: mask PNG must contain only 0 and 255")
    return Tensor((arr == 255)[None].astype(np.float32))


def export_frames(v: VideoSequence, out_dir) -> None:
    """Write frame_%04d.png / mask_%04d.png pairs (indices start at 1)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, (frame, mask) in enumerate(zip(v.frames, v.masks), start=1):
        write_frame_png(frame, out / f"frame_{i:04d}.png")
        write_mask_png(mask, out / f"mask_{i:04d}.png")


# ---------------------------------------------------------------------------
# clip directories, manifests, dataset generation


def save_clip(v: VideoSequence, clip_dir) -> None:
    d = Path(clip_dir)
    d.mkdir(parents=True, exist_ok=True)
    write_raw(np.stack([f.data for f in v.frames]), d / "frames.vten")
    write_raw(np.stack([m.data for m in v.masks]), d / "masks.vten")
    if v.truth is not None:
        write_raw(np.stack([g.data for g in v.truth]), d / "truth.vten")


def load_clip(clip_dir, fps: float = 20.0) -> VideoSequence:
    """Load a clip directory.

    Masks come from ``masks.vten`` when present; otherwise per-frame
    ``mask_%04d.png`` annotations are accepted, which is the ingestion path
    for externally provided occlusion masks.
    """
    d = Path(clip_dir)
    frames_f = d / "frames.vten"
    if not frames_f.exists():
        raise FormatError(f"{d}: missing frames.vten")
    frames = read_raw(frames_f).data
    n = frames.shape[0]
    if (d / "masks.vten").exists():
        masks = read_raw(d / "masks.vten").data
        if masks.shape[0] != n:
            raise FormatError(f"{d}: {masks.shape[0]} masks for {n} frames")
        mask_list = [Tensor(masks[i]) for i in range(n)]
    else:
        pngs = sorted(d.glob("mask_*.png"))
        if len(pngs) != n:
            raise FormatError(f"{d}: found {len(pngs)} mask PNGs for {n} frames")
        mask_list = [read_mask_png(f) for f in pngs]
    truth_list = None
    if (d / "truth.vten").exists():
        truth = read_raw(d / "truth.vten").data
        if truth.shape[0] != n:
            raise FormatError(f"{d}: {truth.shape[0]} truth frames for {n} frames")
        truth_list = [Tensor(truth[i]) for i in range(n)]
    return VideoSequence(
        frames=[Tensor(frames[i]) for i in range(n)],
        masks=mask_list,
        truth=truth_list,
        fps=fps,
    )


@dataclass(frozen=True)
class ManifestRow:
    clip_id: str
    path: str
    n_frames: int
    p: int


def write_manifest(rows, path) -> None:
    lines = [f"{r.clip_id}\t{r.path}\t{r.n_frames}\t{r.p}" for r in rows]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_manifest(path) -> list:
    rows = []
    for ln, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise FormatError(f"{path}:{ln}: expected 4 tab-separated fields")
        try:
            rows.append(ManifestRow(parts[0], parts[1], int(parts[2]), int(parts[3])))
        except ValueError as e:
            raise FormatError(f"{path}:{ln}: {e}") from None
    return rows


def generate_dataset(base_cfg: SynthConfig, n_clips: int, out_dir, seed: int):
    """Generate ``n_clips`` clips plus manifest and 70/10/20 split manifests.

    Returns the full list of manifest rows.  Clip k's generator seed and the
    split permutation both derive statelessly from ``seed``, so the dataset
    is reproducible clip-for-clip and byte-for-byte.
    """
    if n_clips < 1:
        raise ConfigError("need at least one clip")
    base_cfg.validate()
    out = Path(out_dir)
    (out / "clips").mkdir(parents=True, exist_ok=True)
    master = Rng(seed)
    rows = []
    for k in range(n_clips):
        cfg = dataclasses.replace(base_cfg, seed=master.child(k).seed)
        clip = generate_clip(cfg)
        clip_id = f"clip_{k:04d}"
        save_clip(clip, out / "clips" / clip_id)
        rows.append(ManifestRow(clip_id, f"clips/{clip_id}", len(clip), clip.p))
    write_manifest(rows, out / "manifest.tsv")

    perm = master.child(n_clips).permutation(n_clips)
    n_train = int(0.7 * n_clips)
    n_val = int(0.1 * n_clips)
    splits = {
        "train": perm[:n_train],
        "val": perm[n_train : n_train + n_val],
        "test": perm[n_train + n_val :],
    }
    for name, idx in splits.items():
        write_manifest([rows[i] for i in sorted(idx.tolist())], out / f"{name}.tsv")
    return rows


def load_split(data_dir, split: str | None = None) -> list:
    """Load all clips of a dataset directory (or one of its splits).

    Returns (clip_id, VideoSequence) pairs in manifest order.
    """
    root = Path(data_dir)
    manifest = root / (f"{split}.tsv" if split else "manifest.tsv")
    if not manifest.exists():
        raise FormatError(f"missing manifest {manifest}")
    out = []
    for row in read_manifest(manifest):
        out.append((row.clip_id, load_clip(root / row.path)))
    return out
