"""Figures and image grids rendered next to the delimited outputs."""

from __future__ import annotations

import numpy as np
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be pinned first)

from .dataio import write_frame_png
from .errors import ContractError
from .preprocess import build_training_guides, make_masked_frame

_FIG = dict(figsize=(7.0, 4.2), dpi=110)


def save_vae_curve(rows, path) -> None:
    """rows: (step, loss) pairs from encoder-decoder pretraining."""
    fig, ax = plt.subplots(**_FIG)
    ax.plot([r[0] for r in rows], [r[1] for r in rows], lw=1.0)
    ax.set_xlabel("step")
    ax.set_ylabel("reconstruction + KL loss")
    ax.set_title("autoencoder pretraining")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_loss_curves(rows, path) -> None:
    """rows: training StepRecords."""
    steps = [r.step for r in rows]
    fig, ax = plt.subplots(**_FIG)
    ax.plot(steps, [r.loss_total for r in rows], lw=0.8, label="total")
    ax.plot(steps, [r.loss_diff for r in rows], lw=0.8, label="denoising")
    if any(r.loss_motion != 0.0 for r in rows):
        ax.plot(steps, [r.loss_motion for r in rows], lw=0.8, label="motion")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend()
    ax.set_title("training loss")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_timestep_breakdown(rows, path) -> None:
    """Mean total loss grouped by the shared noising timestep of each step."""
    by_t = {}
    for r in rows:
        by_t.setdefault(r.t_shared, []).append(r.loss_total)
    ts = sorted(by_t)
    fig, ax = plt.subplots(**_FIG)
    ax.bar(ts, [float(np.mean(by_t[t])) for t in ts], width=0.9)
    ax.set_xlabel("noising timestep")
    ax.set_ylabel("mean total loss")
    ax.set_title("loss by timestep")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_metric_overview(report, path) -> None:
    """Per-clip structural similarity and temporal coherence panels."""
    labels = [r.clip_id for r in report.rows]
    x = np.arange(len(labels))
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.5, 4.2), dpi=110)
    ax1.bar(x, [r.ssim for r in report.rows], width=0.6, label="full frame")
    ax1.plot(x, [r.ssim_masked for r in report.rows], "o", ms=4,
             color="#444444", label="occluded region")
    ax1.axhline(report.aggregate["ssim"], ls="--", lw=0.8, color="#888888")
    ax1.set_ylabel("ssim")
    ax1.legend(fontsize=8)
    ax2.bar(x - 0.2, [r.tc for r in report.rows], width=0.4, label="restored")
    ax2.bar(x + 0.2, [r.tc_truth for r in report.rows], width=0.4,
            label="ground truth")
    ax2.set_ylabel("temporal coherence (lower is smoother)")
    ax2.legend(fontsize=8)
    for ax in (ax1, ax2):
        ax.set_xticks(x)
        ax.set_xticklabels(labels, rotation=60, fontsize=7)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_ablation_chart(rows, path) -> None:
    """Grouped bars of the headline metrics per configuration row."""
    done = [r for r in rows if not r.failed]
    if not done:
        raise ContractError("no successful configurations to chart")
    x = np.arange(len(done))
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10.5, 4.6), dpi=110)
    ax1.bar(x, [r.scores["ssim"] for r in done], width=0.6)
    ax1.set_ylabel("ssim")
    ax2.bar(x, [r.scores["tc"] for r in done], width=0.6, color="#b44")
    ax2.set_ylabel("temporal coherence")
    for ax in (ax1, ax2):
        ax.set_xticks(x)
        ax.set_xticklabels([r.label for r in done], rotation=35,
                           ha="right", fontsize=7)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


_BORDER = 2


def save_inpaint_grid(seq, out_seq, path, threshold: float = 0.01) -> None:
    """One PNG: a row per frame, columns input, masked context, symmetric
    guide, past guide, restored output, and ground truth when present."""
    if len(out_seq) != len(seq):
        raise ContractError(
            f"restored clip has {len(out_seq)} frames, input has {len(seq)}"
        )
    guides = build_training_guides(seq, threshold)
    rows = []
    for i in range(len(seq)):
        cells = [seq.frames[i].data,
                 make_masked_frame(seq.frames[i], seq.masks[i]).context.data,
                 guides[i].symmetric.data,
                 guides[i].past.data,
                 out_seq.frames[i].data]
        if seq.truth is not None:
            cells.append(seq.truth[i].data)
        rows.append(_joined(cells, axis=2))
    write_frame_png(_joined(rows, axis=1), path)


def _joined(parts, axis: int) -> np.ndarray:
    """Concatenate image blocks with a white separator along ``axis``."""
    sep_shape = list(parts[0].shape)
    sep_shape[axis] = _BORDER
    sep = np.ones(sep_shape, dtype=np.float32)
    out = [parts[0]]
    for part in parts[1:]:
        out.extend([sep, part])
    return np.concatenate(out, axis=axis)
