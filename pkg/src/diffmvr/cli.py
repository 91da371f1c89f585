"""Command-line surface: gen, pretrain-vae, train, inpaint, eval, ablate.

Every subcommand is deterministic in (inputs, seed): re-running writes
byte-identical artifacts.  Exit codes: 0 success, 2 bad configuration,
3 numeric abort, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .ablate import run_ablation
from .config import RunConfig, load_run_config
from .dataio import (VideoSequence, generate_dataset, load_split,
                     read_manifest, save_clip)
from .diffusion import inpaint_clip, pretrain_vae, train
from .errors import ConfigError, ContractError, FormatError, NumericError
from .metrics import evaluate_set
from .models import ModelParams, load_checkpoint, save_checkpoint
from .numerics import Rng
from . import report

GUIDANCE_CHOICES = ("dual", "sym", "past", "present")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="diffmvr",
        description="Dual-guided diffusion inpainting for occluded video.",
    )
    parser.add_argument("command",
                        choices=["gen", "pretrain-vae", "train", "inpaint",
                                 "eval", "ablate"])
    parser.add_argument("--config", help="flat key = value settings file")
    parser.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--guidance", choices=GUIDANCE_CHOICES)
    parser.add_argument("--motion-loss", choices=["on", "off"],
                        dest="motion_loss")
    parser.add_argument("--lambda", type=float, dest="motion_weight",
                        help="motion loss weight")
    parser.add_argument("--alpha1", type=float,
                        help="symmetric-guide fusion weight")
    parser.add_argument("--force", action="store_true",
                        help="allow writing into a non-empty directory")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_run_config(args)
        return _COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ContractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return 3
    except (OSError, FormatError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4


def _out_dir(cfg: RunConfig, *, must_be_fresh: bool = False) -> Path:
    cfg.require("out")
    out = Path(cfg.out)
    if must_be_fresh and not cfg.force and out.is_dir() and any(out.iterdir()):
        raise ContractError(
            f"output directory {out} is not empty; pass --force to overwrite"
        )
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen(cfg: RunConfig) -> int:
    out = _out_dir(cfg, must_be_fresh=True)
    rows = generate_dataset(cfg.synth_config(), cfg.n_clips, out, cfg.seed)
    summary = ", ".join(
        f"{len(read_manifest(out / f'{s}.tsv'))} {s}"
        for s in ("train", "val", "test"))
    print(f"generated {len(rows)} clips into {out} ({summary})")
    return 0


def cmd_pretrain_vae(cfg: RunConfig) -> int:
    cfg.require("data")
    out = _out_dir(cfg)
    clips = load_split(cfg.data, "train")
    params = ModelParams(cfg.model_config(cfg.resolved_guidance()), Rng(cfg.seed))
    rows = pretrain_vae(clips, params.vae, steps=cfg.vae_steps, lr=cfg.vae_lr,
                        seed=cfg.seed)
    save_checkpoint(params, out / "vae.ckpt",
                    extra={"stage": "vae-pretrain", "vae_steps": cfg.vae_steps,
                           "train_seed": cfg.seed})
    lines = ["step,loss"] + [f"{s},{v:.9g}" for s, v in rows]
    (out / "vae_log.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    report.save_vae_curve(rows, out / "vae_loss.png")
    print(f"pretrained autoencoder for {len(rows)} steps; "
          f"final loss {rows[-1][1]:.6g}")
    return 0


def _load_pretrained_vae(cfg: RunConfig, params: ModelParams) -> None:
    loaded, header = load_checkpoint(cfg.vae_checkpoint)
    if header["config"]["p"] != cfg.p or header["config"]["vae_base"] != cfg.vae_base:
        raise ContractError(
            "pretrained autoencoder shape does not match this run's model"
        )
    for p, q in zip(params.vae.parameters(), loaded.vae.parameters()):
        p.data = q.data.copy()


def cmd_train(cfg: RunConfig) -> int:
    cfg.require("data")
    out = _out_dir(cfg)
    mode = cfg.resolved_guidance()
    clips = load_split(cfg.data, "train")
    params = ModelParams(cfg.model_config(mode), Rng(cfg.seed))
    if cfg.vae_checkpoint:
        _load_pretrained_vae(cfg, params)
    else:
        pretrain_vae(clips, params.vae, steps=cfg.vae_steps, lr=cfg.vae_lr,
                     seed=cfg.seed)
    params.freeze_vae()
    rows = train(clips, params, cfg.schedule(), cfg.train_config(mode), out)
    report.save_loss_curves(rows, out / "loss_curve.png")
    report.save_timestep_breakdown(rows, out / "loss_by_timestep.png")
    tail = rows[-min(50, len(rows)):]
    mean_tail = sum(r.loss_total for r in tail) / len(tail)
    print(f"trained {len(rows)} steps ({mode}); "
          f"mean loss over final {len(tail)}: {mean_tail:.6g}")
    return 0


def _load_model(cfg: RunConfig):
    cfg.require("checkpoint")
    params, header = load_checkpoint(cfg.checkpoint)
    sched = cfg.schedule()
    stored = header.get("schedule_hash")
    if stored is not None and stored != sched.fingerprint():
        raise ContractError(
            "checkpoint was trained under a different noise schedule; "
            "adjust t_max/beta_start/beta_end to match"
        )
    mode = cfg.resolved_guidance(header.get("guidance", "dual"))
    return params, sched, mode


def cmd_inpaint(cfg: RunConfig) -> int:
    cfg.require("data")
    out = _out_dir(cfg)
    params, sched, mode = _load_model(cfg)
    clips = load_split(cfg.data, cfg.split)
    (out / "grids").mkdir(exist_ok=True)
    for idx, (clip_id, seq) in enumerate(clips):
        if all(seq.coverage(i) == 0.0 for i in range(len(seq))):
            print(f"{clip_id}: no occlusion, frames pass through unchanged")
        restored = inpaint_clip(seq, params, sched, seed=cfg.seed + idx,
                                guidance=mode, share_noise=cfg.share_noise)
        save_clip(restored, out / "clips" / clip_id)
        report.save_inpaint_grid(seq, restored, out / "grids" / f"{clip_id}.png")
    print(f"restored {len(clips)} clips ({cfg.split} split) into {out}")
    return 0


def _truth_sequence(clip_id: str, seq: VideoSequence) -> VideoSequence:
    if seq.truth is None:
        raise ContractError(f"clip {clip_id!r} has no ground truth to score")
    return VideoSequence(frames=seq.truth, masks=seq.masks, truth=None,
                         fps=seq.fps)


def cmd_eval(cfg: RunConfig) -> int:
    cfg.require("data")
    out = _out_dir(cfg)
    params, sched, mode = _load_model(cfg)
    clips = load_split(cfg.data, cfg.split)
    pairs = []
    for idx, (clip_id, seq) in enumerate(clips):
        restored = inpaint_clip(seq, params, sched, seed=cfg.seed + idx,
                                guidance=mode, share_noise=cfg.share_noise)
        pairs.append((clip_id, restored, _truth_sequence(clip_id, seq)))
    result = evaluate_set(pairs, params)
    result.to_csv(out / "metrics.csv")
    (out / "metrics.txt").write_text(result.table() + "\n", encoding="utf-8")
    report.save_metric_overview(result, out / "metrics.png")
    agg = result.aggregate
    print(f"evaluated {len(pairs)} clips ({cfg.split} split): "
          f"ssim {agg['ssim']:.4f}, masked ssim {agg['ssim_masked']:.4f}, "
          f"tc {agg['tc']:.4f} (truth {agg['tc_truth']:.4f}), "
          f"fid_proxy {agg['fid_proxy']:.4f}, fvd_proxy {agg['fvd_proxy']:.4f}")
    return 0


def cmd_ablate(cfg: RunConfig) -> int:
    out = _out_dir(cfg)
    rows = run_ablation(cfg, out)
    print((out / "ablation.txt").read_text(encoding="utf-8"))
    failed = [r.label for r in rows if r.failed]
    if failed:
        print(f"warning: {len(failed)} configuration(s) failed: "
              + "; ".join(failed), file=sys.stderr)
    return 0


_COMMANDS = {
    "gen": cmd_gen,
    "pretrain-vae": cmd_pretrain_vae,
    "train": cmd_train,
    "inpaint": cmd_inpaint,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
}


if __name__ == "__main__":
    sys.exit(main())
