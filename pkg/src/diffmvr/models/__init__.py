"""Networks: VAE, guidance encoders, token projectors, denoising U-Net."""

from .attention import CrossAttentionBlock, fused_attention
from .guidance import (
    SOURCES,
    GuidanceEncoder,
    GuidanceTokens,
    TokenProjector,
    encode_guidance,
    guide_tokens,
    project_tokens,
)
from .layers import Conv2d, GroupNorm, Linear, Module, timestep_embedding
from .params import ModelConfig, ModelParams, load_checkpoint, save_checkpoint
from .unet import DenoiserUNet, MaskedLatentCond, ResBlock, pool_mask, unet_predict_noise
from .vae import LATENT_CHANNELS, LatentMap, Vae, vae_decode, vae_encode

__all__ = [
    "LATENT_CHANNELS",
    "SOURCES",
    "Conv2d",
    "CrossAttentionBlock",
    "DenoiserUNet",
    "GroupNorm",
    "GuidanceEncoder",
    "GuidanceTokens",
    "LatentMap",
    "Linear",
    "MaskedLatentCond",
    "ModelConfig",
    "ModelParams",
    "Module",
    "ResBlock",
    "TokenProjector",
    "Vae",
    "encode_guidance",
    "fused_attention",
    "guide_tokens",
    "load_checkpoint",
    "pool_mask",
    "project_tokens",
    "save_checkpoint",
    "timestep_embedding",
    "unet_predict_noise",
    "vae_decode",
    "vae_encode",
]
