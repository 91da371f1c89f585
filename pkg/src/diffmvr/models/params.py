"""Model bundle: VAE, per-source guidance encoders/projectors, U-Net, weights.

Checkpoints are one JSON header line (names, shapes, fusion weights, any
caller metadata such as a schedule hash) followed by raw tensor records in
header order.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from ..dataio import decode_raw, encode_raw
from ..errors import ConfigError, ContractError, FormatError
from ..numerics import Rng
from .guidance import SOURCES, GuidanceEncoder, TokenProjector
from .layers import Module
from .unet import DenoiserUNet
from .vae import Vae

_CHECKPOINT_FORMAT = "diffmvr-checkpoint-1"


@dataclass(frozen=True)
class ModelConfig:
    p: int = 32
    p_e: int = 64
    k: int = 8
    d: int = 32
    proj_hidden: int = 128
    vae_base: int = 16
    unet_base: int = 16
    temb_dim: int = 32
    temb_hidden: int = 64
    t_max: int = 50
    alpha1: float = 0.5
    alpha2: float = 0.5
    motion_weight: float = 0.1

    def validate(self) -> None:
        if self.p % 8 != 0 or self.p < 8:
            raise ConfigError(f"frame extent {self.p} must be a positive multiple of 8")
        if self.alpha1 < 0.0 or self.alpha2 < 0.0:
            raise ConfigError(f"fusion weights must be >= 0, got {(self.alpha1, self.alpha2)}")
        if self.alpha1 + self.alpha2 <= 0.0:
            raise ConfigError("fusion weights sum to zero")
        if self.motion_weight < 0.0:
            raise ConfigError(f"motion weight must be >= 0, got {self.motion_weight}")
        if self.t_max < 1:
            raise ConfigError(f"t_max must be >= 1, got {self.t_max}")
        for name in ("p_e", "k", "d", "proj_hidden", "vae_base", "unet_base"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.temb_dim % 2 or self.temb_dim < 2:
            raise ConfigError(f"temb_dim must be a positive even number, got {self.temb_dim}")
        if self.vae_base % 4 or self.unet_base % 4:
            raise ConfigError("channel bases must be divisible by the norm group count")


class ModelParams(Module):
    """All networks plus the fusion and motion-loss weights.

    Each submodule draws weights from its own child stream, so one
    component's size never shifts another's initialization.
    """

    def __init__(self, config: ModelConfig, rng: Rng):
        config.validate()
        self.vae = Vae(rng.child(1), config.vae_base)
        self.enc_sym = GuidanceEncoder(rng.child(2), config.p, config.p_e)
        self.enc_past = GuidanceEncoder(rng.child(3), config.p, config.p_e)
        self.proj_sym = TokenProjector(rng.child(4), config.p_e, config.proj_hidden,
                                       config.k, config.d)
        self.proj_past = TokenProjector(rng.child(5), config.p_e, config.proj_hidden,
                                        config.k, config.d)
        self.unet = DenoiserUNet(rng.child(6), config.t_max, config.temb_dim,
                                 config.temb_hidden, config.d, config.unet_base)
        total = config.alpha1 + config.alpha2
        self.alpha1 = config.alpha1 / total
        self.alpha2 = config.alpha2 / total
        self.motion_weight = config.motion_weight
        self.config = config
        for p in self.parameters():
            p.requires_grad = True

    def encoder_for(self, source: str) -> GuidanceEncoder:
        if source not in SOURCES:
            raise ContractError(f"unknown guidance source {source!r}")
        return self.enc_sym if source == "symmetric" else self.enc_past

    def projector_for(self, source: str) -> TokenProjector:
        if source not in SOURCES:
            raise ContractError(f"unknown guidance source {source!r}")
        return self.proj_sym if source == "symmetric" else self.proj_past

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]

    def freeze_vae(self) -> None:
        self.vae.set_trainable(False)


def save_checkpoint(params: ModelParams, path, extra: dict | None = None) -> None:
    """Write a checkpoint: JSON header line, then one tensor record per name."""
    named = params.named_parameters()
    header = {
        "format": _CHECKPOINT_FORMAT,
        "names": [n for n, _ in named],
        "shapes": {n: list(p.shape) for n, p in named},
        "alpha": [params.alpha1, params.alpha2],
        "motion_weight": params.motion_weight,
        "config": dataclasses.asdict(params.config),
    }
    for key, value in (extra or {}).items():
        if key in header:
            raise ContractError(f"metadata key {key!r} collides with a header field")
        header[key] = value
    blob = bytearray(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
    for _, p in named:
        blob += encode_raw(p)
    Path(path).write_bytes(bytes(blob))


def load_checkpoint(path) -> tuple:
    """Read a checkpoint back into a fresh ModelParams; returns (params, header)."""
    blob = Path(path).read_bytes()
    nl = blob.find(b"\n")
    if nl < 0:
        raise FormatError(f"{path}: missing checkpoint header")
    try:
        header = json.loads(blob[:nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: bad checkpoint header: {exc}") from None
    if header.get("format") != _CHECKPOINT_FORMAT:
        raise FormatError(f"{path}: unknown checkpoint format {header.get('format')!r}")
    config = ModelConfig(**header["config"])
    params = ModelParams(config, Rng(0))
    named = params.named_parameters()
    if [n for n, _ in named] != header["names"]:
        raise FormatError(f"{path}: parameter names do not match this build")
    offset = nl + 1
    for name, p in named:
        record, offset = decode_raw(blob, offset, f"{path}:{name}")
        if record.shape != p.shape:
            raise FormatError(
                f"{path}: {name} has shape {record.shape}, expected {p.shape}"
            )
        p.data = record.data
    if offset != len(blob):
        raise FormatError(f"{path}: {len(blob) - offset} trailing bytes")
    return params, header
