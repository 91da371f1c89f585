"""Run configuration: a flat key = value file with command-line overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .dataio import SynthConfig
from .diffusion import GUIDANCE_MODES, TrainConfig, build_schedule
from .errors import ConfigError
from .models import ModelConfig

_MODE_ALPHAS = {
    "dual": (0.5, 0.5),
    "sym": (1.0, 0.0),
    "past": (0.0, 1.0),
    "present": (0.5, 0.5),
}


@dataclass
class RunConfig:
    """Every tunable of every subcommand, flat.

    ``guidance`` and the fusion weights stay None until resolved so commands
    can fall back to checkpoint metadata or mode defaults.
    """

    # paths
    data: str = ""
    checkpoint: str = ""
    vae_checkpoint: str = ""
    out: str = ""
    seed: int = 0
    force: bool = False
    # synthetic data
    n_clips: int = 200
    p: int = 32
    n_frames: int = 8
    object_radius: int = 9
    drift_cols: int = 3
    drift_rows: int = 2
    occluder: str = "mix"
    coverage: tuple = ()
    clean_threshold: float = 0.01
    fps: float = 20.0
    # model and schedule
    p_e: int = 64
    k: int = 8
    d: int = 32
    proj_hidden: int = 128
    vae_base: int = 16
    unet_base: int = 16
    temb_dim: int = 32
    temb_hidden: int = 64
    t_max: int = 50
    beta_start: float = 1e-4
    beta_end: float = 0.02
    # training
    steps: int = 2000
    lr: float = 1e-3
    vae_steps: int = 300
    vae_lr: float = 1e-3
    checkpoint_every: int = 500
    guidance: str | None = None
    motion_loss: bool = True
    motion_weight: float = 0.1
    alpha1: float | None = None
    alpha2: float | None = None
    # inference and evaluation
    split: str = "test"
    share_noise: bool = True

    def resolved_guidance(self, fallback: str = "dual") -> str:
        mode = self.guidance if self.guidance is not None else fallback
        if mode not in GUIDANCE_MODES:
            raise ConfigError(f"unknown guidance mode {mode!r}")
        return mode

    def resolved_alphas(self, mode: str) -> tuple:
        """Explicit weights win; a lone weight implies a convex pair; with
        neither, the guidance mode picks its natural weights."""
        a1, a2 = self.alpha1, self.alpha2
        if a1 is None and a2 is None:
            return _MODE_ALPHAS[mode]
        if a1 is not None and a2 is None:
            if not 0.0 <= a1 <= 1.0:
                raise ConfigError(f"alpha1 alone must be in [0, 1], got {a1}")
            return a1, 1.0 - a1
        if a1 is None:
            if not 0.0 <= a2 <= 1.0:
                raise ConfigError(f"alpha2 alone must be in [0, 1], got {a2}")
            return 1.0 - a2, a2
        return a1, a2

    def synth_config(self) -> SynthConfig:
        fields = dict(p=self.p, n_frames=self.n_frames,
                      object_radius=self.object_radius,
                      drift_cols=self.drift_cols, drift_rows=self.drift_rows,
                      occluder=self.occluder,
                      clean_threshold=self.clean_threshold, fps=self.fps)
        if self.coverage:
            fields["coverage"] = self.coverage
        cfg = SynthConfig(**fields)
        cfg.validate()
        return cfg

    def model_config(self, mode: str) -> ModelConfig:
        a1, a2 = self.resolved_alphas(mode)
        cfg = ModelConfig(p=self.p, p_e=self.p_e, k=self.k, d=self.d,
                          proj_hidden=self.proj_hidden, vae_base=self.vae_base,
                          unet_base=self.unet_base, temb_dim=self.temb_dim,
                          temb_hidden=self.temb_hidden, t_max=self.t_max,
                          alpha1=a1, alpha2=a2,
                          motion_weight=self.motion_weight)
        cfg.validate()
        return cfg

    def schedule(self):
        return build_schedule(self.t_max, self.beta_start, self.beta_end)

    def train_config(self, mode: str) -> TrainConfig:
        cfg = TrainConfig(steps=self.steps, lr=self.lr, seed=self.seed,
                          guidance=mode, motion_loss=self.motion_loss,
                          checkpoint_every=self.checkpoint_every)
        cfg.validate()
        return cfg

    def require(self, *names: str) -> None:
        for name in names:
            if not getattr(self, name):
                raise ConfigError(f"missing required setting {name!r}")


def _parse_bool(raw: str, key: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {raw!r}")


def _coerce(key: str, raw: str, kind):
    try:
        if kind is bool:
            return _parse_bool(raw, key)
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is tuple:
            return tuple(float(v) for v in raw.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind.__name__}") from None
    return raw


def _field_kinds() -> dict:
    kinds = {}
    for f in dataclasses.fields(RunConfig):
        if f.name in ("guidance",):
            kinds[f.name] = str
        elif f.name in ("alpha1", "alpha2"):
            kinds[f.name] = float
        elif f.name == "coverage":
            kinds[f.name] = tuple
        else:
            kinds[f.name] = type(f.default)
    return kinds


_KINDS = _field_kinds()
_ALIASES = {"lambda": "motion_weight"}


def parse_config_file(path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment; blanks skipped."""
    text = Path(path).read_text(encoding="utf-8")
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        key = _ALIASES.get(key, key)
        if key not in _KINDS:
            raise ConfigError(f"{path}:{lineno}: unknown setting {key!r}")
        values[key] = _coerce(key, raw, _KINDS[key])
    return values


def load_run_config(args) -> RunConfig:
    """Merge defaults, the --config file, then explicit flags (flags win)."""
    values = {}
    if getattr(args, "config", None):
        values.update(parse_config_file(args.config))
    for flag in ("seed", "out", "guidance", "motion_weight", "alpha1"):
        given = getattr(args, flag, None)
        if given is not None:
            values[flag] = given
    if getattr(args, "motion_loss", None) is not None:
        values["motion_loss"] = args.motion_loss == "on"
    if getattr(args, "force", False):
        values["force"] = True
    if "seed" in values and not 0 <= int(values["seed"]) < 2 ** 64:
        raise ConfigError(f"seed must fit in 64 bits, got {values['seed']}")
    return RunConfig(**values)
