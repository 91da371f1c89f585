"""Ablation harness: train and score every guidance/loss configuration.

Seven table rows come from six unique training jobs (the past-guide-with-
motion job backs two rows).  All jobs share one pretrained VAE and one
fixed feature encoder so their scores are comparable; job k trains with
seed ``base_seed + k``.
"""

from __future__ import annotations

import dataclasses
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataio import VideoSequence, load_split
from .diffusion import inpaint_clip, pretrain_vae, train
from .errors import ConfigError, ContractError
from .metrics import evaluate_set
from .models import ModelParams
from .numerics import Rng

JOBS = (
    ("past", False),
    ("dual", False),
    ("past", True),
    ("dual", True),
    ("sym", True),
    ("present", True),
)

# (label, job index); the first four vary one ingredient at a time, the
# last three isolate each guide source under the full loss.
ROW_SPECS = (
    ("baseline", 0),
    ("baseline + dual guides", 1),
    ("baseline + motion loss", 2),
    ("dual guides + motion loss", 3),
    ("single guide: symmetric", 4),
    ("single guide: past frame", 2),
    ("single guide: present frame", 5),
)

# Rows 0-3 are read against the baseline; the single-guide rows are read
# against the full configuration they strip down.
_REFERENCE_ROW = (0, 0, 0, 0, 3, 3, 3)
_DELTA_METRICS = ("fid_proxy", "ssim", "tc", "fvd_proxy")


@dataclass
class AblationRow:
    label: str
    guidance: str
    motion_loss: bool
    seed: int
    failed: bool = False
    error: str = ""
    scores: dict = field(default_factory=dict)
    deltas: dict = field(default_factory=dict)


def _inject_vae(params: ModelParams, weights: list) -> None:
    own = params.vae.parameters()
    if len(own) != len(weights):
        raise ContractError("pretrained VAE weight count mismatch")
    for p, w in zip(own, weights):
        if p.data.shape != w.shape:
            raise ContractError(
                f"pretrained VAE weight shape {w.shape} != {p.data.shape}"
            )
        p.data = w.copy()


def _job_dir(out: Path, guidance: str, motion: bool) -> Path:
    return out / f"run_{guidance}_{'motion' if motion else 'plain'}"


def _truth_sequence(seq: VideoSequence) -> VideoSequence:
    if seq.truth is None:
        raise ContractError("held-out clip has no ground truth to score against")
    return VideoSequence(frames=seq.truth, masks=seq.masks, truth=None,
                         fps=seq.fps)


def run_job(payload: dict) -> dict:
    """Train one configuration and score it on the held-out split.

    Module-level and primitive-typed so worker processes can receive it.
    """
    from .config import RunConfig  # local import breaks the module cycle

    cfg = RunConfig(**payload["cfg"])
    mode, motion, seed = payload["guidance"], payload["motion"], payload["seed"]
    run_dir = Path(payload["run_dir"])
    job_cfg = dataclasses.replace(cfg, guidance=mode, motion_loss=motion,
                                  seed=seed, alpha1=None, alpha2=None)
    train_clips = load_split(cfg.data, "train")
    params = ModelParams(job_cfg.model_config(mode), Rng(seed))
    _inject_vae(params, payload["vae_weights"])
    params.freeze_vae()
    sched = job_cfg.schedule()
    train(train_clips, params, sched, job_cfg.train_config(mode), run_dir)
    held_out = load_split(cfg.data, cfg.split)
    pairs = []
    for idx, (clip_id, seq) in enumerate(held_out):
        restored = inpaint_clip(seq, params, sched, seed=seed + idx,
                                guidance=mode, share_noise=cfg.share_noise)
        pairs.append((clip_id, restored, _truth_sequence(seq)))
    metric_params = ModelParams(cfg.model_config("dual"), Rng(payload["base_seed"]))
    report = evaluate_set(pairs, metric_params)
    report.to_csv(run_dir / "metrics.csv")
    (run_dir / "metrics.txt").write_text(report.table() + "\n", encoding="utf-8")
    return dict(report.aggregate)


def run_ablation(cfg, out_dir) -> list:
    """Run all configurations; returns the seven AblationRows.

    DIFFMVR_THREADS > 1 runs the independent jobs in worker processes.
    """
    cfg.require("data", "out")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_clips = load_split(cfg.data, "train")
    base = ModelParams(cfg.model_config("dual"), Rng(cfg.seed))
    pretrain_vae(train_clips, base.vae, steps=cfg.vae_steps, lr=cfg.vae_lr,
                 seed=cfg.seed)
    vae_weights = [p.data.copy() for p in base.vae.parameters()]
    cfg_fields = dataclasses.asdict(cfg)
    payloads = []
    for idx, (mode, motion) in enumerate(JOBS):
        payloads.append({
            "cfg": cfg_fields,
            "guidance": mode,
            "motion": motion,
            "seed": cfg.seed + idx,
            "base_seed": cfg.seed,
            "run_dir": str(_job_dir(out, mode, motion)),
            "vae_weights": vae_weights,
        })
    results = _run_all(payloads)
    rows = []
    for label, job_idx in ROW_SPECS:
        mode, motion = JOBS[job_idx]
        row = AblationRow(label=label, guidance=mode, motion_loss=motion,
                          seed=cfg.seed + job_idx)
        outcome = results[job_idx]
        if isinstance(outcome, Exception):
            row.failed = True
            row.error = f"{type(outcome).__name__}: {outcome}"
        else:
            row.scores = outcome
        rows.append(row)
    for i, row in enumerate(rows):
        ref = rows[_REFERENCE_ROW[i]]
        if i == _REFERENCE_ROW[i] or row.failed or ref.failed:
            continue
        for m in _DELTA_METRICS:
            base_v = ref.scores[m]
            row.deltas[m] = (100.0 * (row.scores[m] - base_v) / base_v
                             if base_v != 0.0 else float("nan"))
    write_ablation_csv(rows, out / "ablation.csv")
    (out / "ablation.txt").write_text(format_ablation_table(rows) + "\n",
                                      encoding="utf-8")
    from .report import save_ablation_chart  # deferred: keeps workers figure-free

    if any(not r.failed for r in rows):
        save_ablation_chart(rows, out / "ablation.png")
    return rows


def _run_all(payloads: list) -> list:
    workers = _worker_budget()
    if workers <= 1:
        results = []
        for p in payloads:
            try:
                results.append(run_job(p))
            except Exception as exc:  # noqa: BLE001 - failure marks the row
                results.append(exc)
        return results
    with ProcessPoolExecutor(max_workers=min(workers, len(payloads))) as pool:
        futures = [pool.submit(run_job, p) for p in payloads]
        results = []
        for f in futures:
            try:
                results.append(f.result())
            except Exception as exc:  # noqa: BLE001
                results.append(exc)
        return results


def _worker_budget() -> int:
    raw = os.environ.get("DIFFMVR_THREADS", "1")
    try:
        workers = int(raw)
    except ValueError:
        raise ConfigError(f"DIFFMVR_THREADS must be an integer, got {raw!r}") from None
    if workers < 1:
        raise ConfigError(f"DIFFMVR_THREADS must be >= 1, got {workers}")
    return workers


def _cell(row: AblationRow, metric: str) -> str:
    if row.failed:
        return "--"
    value = f"{row.scores[metric]:.4f}"
    delta = row.deltas.get(metric)
    if delta is None:
        return value
    arrow = "▲" if delta >= 0 else "▼"
    return f"{value} {arrow}{abs(delta):.1f}%"


def format_ablation_table(rows: list) -> str:
    header = ["configuration", "fid_proxy", "ssim", "tc", "fvd_proxy", "status"]
    body = []
    for row in rows:
        status = f"FAILED: {row.error}" if row.failed else "ok"
        body.append([row.label] + [_cell(row, m) for m in _DELTA_METRICS]
                    + [status])
    widths = [max(len(r[i]) for r in [header] + body)
              for i in range(len(header))]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    lines = [fmt.format(*header), fmt.format(*["-" * w for w in widths])]
    lines += [fmt.format(*r) for r in body]
    return "\n".join(lines)


def write_ablation_csv(rows: list, path) -> None:
    cols = ["label", "guidance", "motion_loss", "seed", "status",
            "fid_proxy", "ssim", "ssim_masked", "tc", "tc_truth", "fvd_proxy",
            "fid_delta_pct", "ssim_delta_pct", "tc_delta_pct", "fvd_delta_pct"]
    lines = [",".join(cols)]
    for r in rows:
        cells = [r.label, r.guidance, "on" if r.motion_loss else "off",
                 str(r.seed), "failed" if r.failed else "ok"]
        for m in ("fid_proxy", "ssim", "ssim_masked", "tc", "tc_truth",
                  "fvd_proxy"):
            cells.append("" if r.failed else f"{r.scores[m]:.9g}")
        for m in _DELTA_METRICS:
            delta = r.deltas.get(m)
            cells.append("" if delta is None else f"{delta:.9g}")
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
