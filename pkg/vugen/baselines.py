"""
vugen/baselines.py

The two comparison systems, trained with the same generator machinery as
VUGEN but over a tiny VAE's latent space:

- decoupled: the generation tower learns to sample standardized VAE tokens
- repa: the same, plus an alignment term pulling a middle generation-tower
  layer (through a learned linear projection) toward the frozen
  understanding encoder's clean-image patch features

Also holds the VAE itself. Its latent grid is 8 x 8 x 4 at 32 px, i.e. two
stride-2 stages.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import torch
from einops import rearrange
from torch import nn
from tqdm import tqdm

from vugen import config
from vugen.checkpoints import load_checkpoint, module_hash, save_checkpoint
from vugen.config import BaselineConfig, DecoderConfig, GeneratorConfig
from vugen.encoder import UnderstandingEncoder, encode_dataset
from vugen.errors import TrainingError, ValidationError
from vugen.genmodel import AlignmentHead, GeneratorResult, LatentCorpus, TextTower, train_generator
from vugen.layers import freeze_module
from vugen.reducer import fit_latent_stats
from vugen.seeding import batch_indices, init_seed, torch_generator
from vugen.toydata import ShapesDataset

logger = logging.getLogger(__name__)

BASELINE_VARIANTS = ("decoupled", "repa")


# -----------------------------
# TINY VAE
# -----------------------------


class TinyVAE(nn.Module):
    """Convolutional VAE with an 8 x 8 x C latent grid and tanh output."""

    def __init__(self, latent_channels: int = config.VAE_LATENT_CHANNELS, width: int = config.VAE_WIDTH) -> None:
        super().__init__()
        self.latent_channels = latent_channels
        half = width // 2
        self.encoder = nn.Sequential(
            nn.Conv2d(3, half, 3, padding=1),
            nn.SiLU(),
            nn.Conv2d(half, width, 4, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(width, width, 4, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(width, 2 * latent_channels, 1),
        )
        self.decoder = nn.Sequential(
            nn.Conv2d(latent_channels, width, 3, padding=1),
            nn.SiLU(),
            nn.ConvTranspose2d(width, width, 4, stride=2, padding=1),
            nn.SiLU(),
            nn.ConvTranspose2d(width, half, 4, stride=2, padding=1),
            nn.SiLU(),
            nn.Conv2d(half, 3, 3, padding=1),
            nn.Tanh(),
        )

    def posterior(self, x: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
        """Mean and log-variance maps ``(B, C, 8, 8)``; log-variance is clamped."""
        mu, logvar = self.encoder(x).chunk(2, dim=1)
        return mu, logvar.clamp(-30.0, 20.0)

    def decode(self, latent: torch.Tensor) -> torch.Tensor:
        return self.decoder(latent)

    def forward(self, x: torch.Tensor, generator: Optional[torch.Generator] = None) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        mu, logvar = self.posterior(x)
        eps = torch.randn(mu.shape, generator=generator, device=mu.device if generator is None else generator.device).to(mu)
        latent = mu + torch.exp(0.5 * logvar) * eps
        return self.decode(latent), mu, logvar

    def encode_tokens(self, x: torch.Tensor) -> torch.Tensor:
        """Posterior means as a token grid ``(B, 64, C)``."""
        return rearrange(self.posterior(x)[0], "b c h w -> b (h w) c")

    def decode_tokens(self, tokens: torch.Tensor) -> torch.Tensor:
        side = int(round(tokens.shape[1] ** 0.5))
        return self.decode(rearrange(tokens, "b (h w) c -> b c h w", h=side, w=side))


def gaussian_kl(mu: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
    """Elementwise ``KL(N(mu, sigma^2) || N(0, 1)) = 0.5 (mu^2 + sigma^2 - 1 - ln sigma^2)``."""
    return 0.5 * (mu**2 + logvar.exp() - 1.0 - logvar)


def vae_loss(
    recon: torch.Tensor, x: torch.Tensor, mu: torch.Tensor, logvar: torch.Tensor, beta: float
) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Reconstruction MSE + beta * KL, both averaged per element."""
    mse = ((recon - x) ** 2).mean()
    kl = gaussian_kl(mu, logvar).mean()
    return mse + beta * kl, mse, kl


@dataclass
class VaeResult:
    vae: TinyVAE
    val_mse: float
    untrained_val_mse: float
    losses: List[float] = field(default_factory=list)


@torch.no_grad()
def vae_reconstruction_mse(vae: TinyVAE, images: torch.Tensor, batch_size: int = 256) -> float:
    device = next(vae.parameters()).device
    total = 0.0
    for i in range(0, len(images), batch_size):
        x = images[i:i + batch_size].to(device)
        mu, _ = vae.posterior(x)
        total += float(((vae.decode(mu) - x) ** 2).sum())
    return total / images.numel()


def train_vae(
    train: ShapesDataset,
    val: ShapesDataset,
    cfg: DecoderConfig,
    seed: int = 0,
    device: str = "cpu",
) -> VaeResult:
    """
    ELBO training for ``cfg.vae_steps`` steps; validation reconstruction MSE
    is recorded before and after.

    Raises
    ------
    TrainingError
        If the loss diverges.
    """
    init_seed(seed, 601)
    vae = TinyVAE().to(device)
    val_images = val.images(range(min(len(val), config.RECON_EVAL_IMAGES)))
    untrained = vae_reconstruction_mse(vae, val_images)
    train_images = train.images()
    optimizer = torch.optim.AdamW(vae.parameters(), lr=cfg.learning_rate, betas=config.ADAM_BETAS, weight_decay=0.0)
    losses: List[float] = []
    vae.train()
    for step in tqdm(range(cfg.vae_steps), desc="train vae", leave=False):
        x = train_images[batch_indices(len(train), cfg.batch_size, seed, step)].to(device)
        recon, mu, logvar = vae(x, torch_generator(seed, step, 6, device=device))
        loss, mse, kl = vae_loss(recon, x, mu, logvar, cfg.vae_beta)
        if not torch.isfinite(loss):
            raise TrainingError("VAE loss is not finite", step=step)
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()
        losses.append(float(loss))
        if step % config.LOG_EVERY == 0:
            logger.info("vae step %d loss %.4f (mse %.4f kl %.4f)", step, losses[-1], float(mse), float(kl))
    freeze_module(vae)
    val_mse = vae_reconstruction_mse(vae, val_images)
    logger.info("vae val reconstruction mse %.4f (untrained %.4f)", val_mse, untrained)
    return VaeResult(vae=vae, val_mse=val_mse, untrained_val_mse=untrained, losses=losses)


def save_vae(stem: Path | str, result: VaeResult, cfg: DecoderConfig) -> str:
    return save_checkpoint(
        stem,
        result.vae.state_dict(),
        config=cfg,
        metadata={
            "latent_channels": result.vae.latent_channels,
            "val_mse": result.val_mse,
            "untrained_val_mse": result.untrained_val_mse,
            "steps": len(result.losses),
        },
    )


def load_vae(stem: Path | str, device: str = "cpu") -> TinyVAE:
    tensors, manifest = load_checkpoint(stem)
    vae = TinyVAE(latent_channels=manifest["metadata"]["latent_channels"])
    vae.load_state_dict(tensors)
    return freeze_module(vae).to(device)


class VaeCodec:
    """Raw VAE latent tokens decoded by the VAE decoder."""

    def __init__(self, vae: TinyVAE, name: str = "decoupled") -> None:
        self.vae = vae
        self.name = name

    @torch.no_grad()
    def decode(self, latents: torch.Tensor, seed: int) -> torch.Tensor:
        return self.vae.decode_tokens(latents).clamp(-1.0, 1.0)


# -----------------------------
# GENERATORS OVER VAE LATENTS
# -----------------------------


def validate_baseline_config(cfg: BaselineConfig, depth: int) -> BaselineConfig:
    if cfg.variant not in BASELINE_VARIANTS:
        raise ValidationError("variant", f"expected one of {BASELINE_VARIANTS}, got {cfg.variant!r}")
    if cfg.variant == "repa":
        if not 0 <= cfg.align_layer < depth:
            raise ValidationError("align_layer", f"index {cfg.align_layer} out of range 0..{depth - 1}")
        if cfg.align_weight < 0:
            raise ValidationError("align_weight", f"must be >= 0, got {cfg.align_weight}")
    return cfg


@torch.no_grad()
def build_vae_corpus(
    vae: TinyVAE,
    dataset: ShapesDataset,
    encoder: Optional[UnderstandingEncoder] = None,
    batch_size: int = 512,
) -> LatentCorpus:
    """
    Standardized VAE posterior means of every training image. With an
    encoder, its full-dimension patch features are attached as alignment
    targets.
    """
    device = next(vae.parameters()).device
    images = dataset.images()
    raw = torch.cat([vae.encode_tokens(images[i:i + batch_size].to(device)).cpu() for i in range(0, len(images), batch_size)])
    stats = fit_latent_stats(raw)
    upstream: Dict[str, str] = {"vae": module_hash(vae)}
    align_targets = None
    if encoder is not None:
        encoder.require_frozen()
        align_targets = encode_dataset(encoder, images)
        upstream["encoder"] = encoder.param_hash
    return LatentCorpus(
        tokens=dataset.tokens,
        latents=stats.standardize(raw),
        stats=stats,
        upstream=upstream,
        target="decoupled",
        align_targets=align_targets,
    )


def train_decoupled(
    corpus: LatentCorpus,
    text_tower: TextTower,
    gen_cfg: GeneratorConfig,
    vae_hash: str,
    seed: int = 0,
    device: str = "cpu",
    **train_kwargs,
) -> GeneratorResult:
    """Generator over standardized VAE latents, no alignment."""
    corpus = replace(corpus, target="decoupled")
    return train_generator(corpus, text_tower, gen_cfg, {"vae": vae_hash}, seed=seed, device=device, **train_kwargs)


def train_repa_variant(
    corpus: LatentCorpus,
    text_tower: TextTower,
    gen_cfg: GeneratorConfig,
    baseline: BaselineConfig,
    vae_hash: str,
    encoder_hash: str,
    seed: int = 0,
    device: str = "cpu",
    **train_kwargs,
) -> GeneratorResult:
    """
    Decoupled training plus ``align_weight * (1 - cosine)`` between the
    projected hidden states after ``align_layer`` and clean encoder features.
    With ``align_weight == 0`` the run is identical to ``train_decoupled``.
    """
    validate_baseline_config(baseline, gen_cfg.depth)
    if corpus.align_targets is None:
        raise ValidationError("corpus", "REPA needs encoder alignment targets")
    init_seed(seed, 501)
    projection = nn.Linear(gen_cfg.width, corpus.align_targets.shape[-1])
    align = AlignmentHead(projection=projection, layer=baseline.align_layer, weight=baseline.align_weight)
    return train_generator(
        replace(corpus, target="repa"),
        text_tower,
        gen_cfg,
        {"vae": vae_hash, "encoder": encoder_hash},
        seed=seed,
        device=device,
        align=align,
        **train_kwargs,
    )
