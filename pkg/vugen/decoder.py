"""
vugen/decoder.py

Stage two, P(x | z~): decoding reduced latents back to pixels.

- ``PixelDecoder``: pixel-space diffusion decoder (PDD), a small U-ViT with
  convolutional down/up stages and transformer blocks at the coarsest
  level, where projected reduced-latent tokens are concatenated to the
  image tokens
- ``LatentDecoder``: the LDM variant, a transformer predicting flow
  velocity in a frozen VAE's latent space, conditioned the same way

``ReconstructionModel`` bundles a reducer with one of the decoders so the
two are trained jointly (a PCA reducer simply has nothing to train).
The PDD objective is flow matching in pixel space plus a frozen-encoder
perceptual term and a REPA alignment term.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import torch
import torch.nn.functional as F
from einops import rearrange
from torch import nn
from tqdm import tqdm

from vugen import config
from vugen.checkpoints import load_checkpoint, module_hash, require_hash, save_checkpoint
from vugen.config import DecoderConfig
from vugen.encoder import UnderstandingEncoder, encode_dataset
from vugen.errors import DependencyError, ShapeError, TrainingError, ValidationError
from vugen.flow import euler_integrate, flow_matching_loss, interpolate, sample_noise, sample_times
from vugen.layers import TimestepEmbedder, TransformerBlock, as_time_vector, freeze_module
from vugen.reducer import LatentStats, PCAReducer, ReducerSpec, build_reducer, fit_latent_stats, pca_fit, reduce
from vugen.seeding import batch_indices, init_seed, torch_generator
from vugen.toydata import ShapesDataset

logger = logging.getLogger(__name__)

IMAGE_SHAPE = (3, config.IMAGE_SIZE, config.IMAGE_SIZE)


# -----------------------------
# NETWORKS
# -----------------------------


class ResBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, time_dim: int) -> None:
        super().__init__()
        self.norm1 = nn.GroupNorm(8, c_in)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.time = nn.Linear(time_dim, c_out)
        self.norm2 = nn.GroupNorm(8, c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x: torch.Tensor, temb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.time(temb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return self.skip(x) + h


class PixelDecoder(nn.Module):
    """U-ViT velocity predictor ``v(x_t, t | z~)`` over images."""

    def __init__(
        self,
        cond_dim: int,
        base_width: int = config.DECODER_BASE_WIDTH,
        stages: int = config.DECODER_STAGES,
        blocks: int = config.DECODER_TRANSFORMER_BLOCKS,
        heads: int = config.DECODER_HEADS,
        repa_dim: int = config.ENCODER_EMBED_DIM,
        image_size: int = config.IMAGE_SIZE,
        n_cond_tokens: int = config.N_PATCHES,
    ) -> None:
        super().__init__()
        widths = [base_width * 2**i for i in range(stages + 1)]
        width = widths[-1]
        coarse = image_size // 2**stages
        self.stages = stages
        self.cond_dim = cond_dim
        self.n_cond_tokens = n_cond_tokens

        self.time_embed = TimestepEmbedder(width)
        self.stem = nn.Conv2d(3, widths[0], 3, padding=1)
        self.down_blocks = nn.ModuleList([ResBlock(widths[i], widths[i], width) for i in range(stages)])
        self.downsamplers = nn.ModuleList(
            [nn.Conv2d(widths[i], widths[i + 1], 3, stride=2, padding=1) for i in range(stages)]
        )
        self.token_pos = nn.Parameter(torch.randn(1, coarse * coarse, width) * 0.02)
        self.cond_adapter = nn.Sequential(nn.Linear(cond_dim, width), nn.SiLU(), nn.Linear(width, width))
        self.cond_pos = nn.Parameter(torch.randn(1, n_cond_tokens, width) * 0.02)
        self.blocks = nn.ModuleList([TransformerBlock(width, heads) for _ in range(blocks)])
        self.repa_proj = nn.Linear(width, repa_dim)
        self.upsamplers = nn.ModuleList(
            [
                nn.Sequential(nn.Upsample(scale_factor=2, mode="nearest"), nn.Conv2d(widths[i + 1], widths[i], 3, padding=1))
                for i in range(stages)
            ]
        )
        self.up_blocks = nn.ModuleList([ResBlock(2 * widths[i], widths[i], width) for i in range(stages)])
        self.out_norm = nn.GroupNorm(8, widths[0])
        self.out = nn.Conv2d(widths[0], 3, 3, padding=1)

    def forward(
        self, x_t: torch.Tensor, t: torch.Tensor, cond: torch.Tensor, return_repa: bool = False
    ) -> torch.Tensor | Tuple[torch.Tensor, torch.Tensor]:
        if cond.shape[1:] != (self.n_cond_tokens, self.cond_dim):
            raise ShapeError(f"conditioning {tuple(cond.shape)} != (B, {self.n_cond_tokens}, {self.cond_dim})")
        if x_t.shape[0] != cond.shape[0]:
            raise ShapeError(f"batch mismatch: x_t {x_t.shape[0]} vs cond {cond.shape[0]}")
        temb = self.time_embed(as_time_vector(t, x_t.shape[0], x_t))
        h = self.stem(x_t)
        skips = []
        for block, down in zip(self.down_blocks, self.downsamplers):
            h = block(h, temb)
            skips.append(h)
            h = down(h)
        grid = h.shape[-1]
        tokens = rearrange(h, "b c h w -> b (h w) c") + self.token_pos + temb[:, None]
        n = tokens.shape[1]
        seq = torch.cat([tokens, self.cond_adapter(cond) + self.cond_pos], dim=1)
        repa_hidden = None
        for i, block in enumerate(self.blocks):
            seq = block(seq)
            if i == 0:
                repa_hidden = seq[:, :n]
        h = rearrange(seq[:, :n], "b (h w) c -> b c h w", h=grid)
        for i in reversed(range(self.stages)):
            h = self.upsamplers[i](h)
            h = self.up_blocks[i](torch.cat([h, skips[i]], dim=1), temb)
        out = self.out(F.silu(self.out_norm(h)))
        if return_repa:
            return out, self.repa_proj(repa_hidden)
        return out


class LatentDecoder(nn.Module):
    """Transformer velocity predictor over VAE latent tokens ``(B, N, C)``."""

    def __init__(
        self,
        latent_channels: int,
        cond_dim: int,
        width: int = config.LDM_WIDTH,
        depth: int = config.LDM_DEPTH,
        heads: int = config.DECODER_HEADS,
        n_tokens: int = config.N_PATCHES,
        n_cond_tokens: int = config.N_PATCHES,
    ) -> None:
        super().__init__()
        self.cond_dim = cond_dim
        self.n_cond_tokens = n_cond_tokens
        self.latent_in = nn.Linear(latent_channels, width)
        self.latent_pos = nn.Parameter(torch.randn(1, n_tokens, width) * 0.02)
        self.cond_adapter = nn.Sequential(nn.Linear(cond_dim, width), nn.SiLU(), nn.Linear(width, width))
        self.cond_pos = nn.Parameter(torch.randn(1, n_cond_tokens, width) * 0.02)
        self.time_embed = TimestepEmbedder(width)
        self.blocks = nn.ModuleList([TransformerBlock(width, heads) for _ in range(depth)])
        self.norm = nn.LayerNorm(width)
        self.latent_out = nn.Linear(width, latent_channels)

    def forward(self, y_t: torch.Tensor, t: torch.Tensor, cond: torch.Tensor) -> torch.Tensor:
        if cond.shape[1:] != (self.n_cond_tokens, self.cond_dim):
            raise ShapeError(f"conditioning {tuple(cond.shape)} != (B, {self.n_cond_tokens}, {self.cond_dim})")
        temb = self.time_embed(as_time_vector(t, y_t.shape[0], y_t))
        tokens = self.latent_in(y_t) + self.latent_pos + temb[:, None]
        n = tokens.shape[1]
        seq = torch.cat([tokens, self.cond_adapter(cond) + self.cond_pos], dim=1)
        for block in self.blocks:
            seq = block(seq)
        return self.latent_out(self.norm(seq[:, :n]))


# -----------------------------
# LOSSES
# -----------------------------


def perceptual_loss(
    encoder: UnderstandingEncoder,
    x_hat: torch.Tensor,
    x: torch.Tensor,
    layers: Tuple[int, ...] = config.PERCEPTUAL_LAYERS,
) -> torch.Tensor:
    """Mean squared distance of frozen-encoder features, averaged over ``layers``."""
    encoder.require_frozen()
    terms = [
        ((encoder.encoder_features(x_hat, layer) - encoder.encoder_features(x, layer)) ** 2).mean()
        for layer in layers
    ]
    return torch.stack(terms).mean()


def repa_align_loss(hidden: torch.Tensor, target: torch.Tensor, eps: float = 1e-8) -> torch.Tensor:
    """``1 - mean patchwise cosine(hidden, target)``, in [0, 2]."""
    if hidden.shape != target.shape:
        raise ShapeError(f"projected hidden {tuple(hidden.shape)} != target {tuple(target.shape)}")
    return 1.0 - F.cosine_similarity(hidden, target, dim=-1, eps=eps).mean()


@dataclass(frozen=True)
class DecoderLossWeights:
    flow: float = config.LAMBDA_FLOW
    perceptual: float = config.LAMBDA_PERCEPTUAL
    repa: float = config.LAMBDA_REPA


@dataclass(frozen=True)
class DecoderLossReport:
    flow: float
    perceptual: float
    repa: float
    total: float
    weights: DecoderLossWeights

    @classmethod
    def from_terms(cls, flow: float, perceptual: float, repa: float, weights: DecoderLossWeights) -> "DecoderLossReport":
        total = weights.flow * flow + weights.perceptual * perceptual + weights.repa * repa
        return cls(flow=flow, perceptual=perceptual, repa=repa, total=total, weights=weights)


# -----------------------------
# REDUCER + DECODER
# -----------------------------


class ReconstructionModel(nn.Module):
    """
    Reducer g and decoder d trained together. Reduced latents are
    standardized before conditioning: with batch statistics while training
    (gradients flow through them), with the fitted train-split statistics
    once ``set_stats`` has been called.
    """

    def __init__(self, reducer: nn.Module, decoder: nn.Module, kind: str) -> None:
        super().__init__()
        if kind not in ("pdd", "ldm"):
            raise ValidationError("kind", f"expected pdd or ldm, got {kind!r}")
        self.reducer = reducer
        self.decoder = decoder
        self.kind = kind
        c = reducer.spec.output_dim
        self.register_buffer("latent_mean", torch.zeros(c))
        self.register_buffer("latent_std", torch.ones(c))
        self.register_buffer("stats_fitted", torch.tensor(False))
        if kind == "ldm":
            ch = decoder.latent_out.out_features
            self.register_buffer("target_mean", torch.zeros(ch))
            self.register_buffer("target_std", torch.ones(ch))

    @property
    def stats(self) -> LatentStats:
        return LatentStats(mean=self.latent_mean, std=self.latent_std)

    @property
    def target_stats(self) -> LatentStats:
        return LatentStats(mean=self.target_mean, std=self.target_std)

    def set_stats(self, stats: LatentStats) -> None:
        self.latent_mean.copy_(stats.mean)
        self.latent_std.copy_(stats.std)
        self.stats_fitted.fill_(True)

    def reduce_latent(self, z: torch.Tensor) -> torch.Tensor:
        return reduce(z, self.reducer)

    def standardize(self, reduced: torch.Tensor) -> torch.Tensor:
        if self.training or not bool(self.stats_fitted):
            return fit_latent_stats(reduced, warn=False).standardize(reduced)
        return self.stats.standardize(reduced)

    def condition(self, z: torch.Tensor) -> torch.Tensor:
        return self.standardize(self.reduce_latent(z))

    def trainable_parameters(self) -> List[nn.Parameter]:
        return [p for p in self.parameters() if p.requires_grad]


def build_reconstruction_model(
    kind: str,
    variant: str,
    spec: ReducerSpec,
    cfg: DecoderConfig,
    vae_channels: int = config.VAE_LATENT_CHANNELS,
    seed: int = 0,
) -> ReconstructionModel:
    init_seed(seed, 201)
    reducer = build_reducer(variant, spec)
    if kind == "pdd":
        decoder = PixelDecoder(
            cond_dim=spec.output_dim,
            base_width=cfg.base_width,
            stages=cfg.stages,
            blocks=cfg.transformer_blocks,
            heads=cfg.heads,
            repa_dim=spec.input_dim,
        )
    else:
        decoder = LatentDecoder(vae_channels, spec.output_dim, width=cfg.ldm_width, depth=cfg.ldm_depth, heads=cfg.heads)
    return ReconstructionModel(reducer, decoder, kind)


def pdd_velocity(model: ReconstructionModel, x_t: torch.Tensor, t: torch.Tensor | float, reduced: torch.Tensor) -> torch.Tensor:
    """Image-shaped velocity for a noisy image, a time and a raw reduced latent."""
    if x_t.shape[1:] != IMAGE_SHAPE:
        raise ShapeError(f"x_t {tuple(x_t.shape)} is not (B, {IMAGE_SHAPE})")
    return model.decoder(x_t, t, model.standardize(reduced))


def compute_decoder_loss(
    model: ReconstructionModel,
    encoder: UnderstandingEncoder,
    images: torch.Tensor,
    latents: torch.Tensor,
    weights: DecoderLossWeights = DecoderLossWeights(),
    generator: Optional[torch.Generator] = None,
    t: Optional[torch.Tensor] = None,
    noise: Optional[torch.Tensor] = None,
    targets: Optional[torch.Tensor] = None,
) -> Tuple[torch.Tensor, DecoderLossReport]:
    """
    Loss for one batch.

    For the PDD the flow target lives in pixel space and ``images`` are
    the data; for the LDM ``targets`` holds the standardized VAE latent
    tokens and only the flow term is used. ``t`` / ``noise`` default to
    fresh draws from ``generator``.
    """
    cond = model.condition(latents)
    data = images if model.kind == "pdd" else targets
    if data is None:
        raise DependencyError("LDM decoder loss needs standardized VAE latent targets")
    if t is None or noise is None:
        if generator is None:
            raise ValidationError("generator", "needed when t or noise is not given")
        t = sample_times(data.shape[0], generator, data) if t is None else t
        noise = sample_noise(data.shape, generator, data) if noise is None else noise

    x_t = interpolate(data, noise, t)
    zero = data.new_zeros(())
    if model.kind == "pdd":
        velocity, hidden = model.decoder(x_t, t, cond, return_repa=True)
        flow = flow_matching_loss(velocity, data, noise)
        perceptual = zero
        if weights.perceptual:
            x_hat = x_t + (1 - t).reshape(-1, 1, 1, 1) * velocity
            perceptual = perceptual_loss(encoder, x_hat, images)
        repa = zero
        if weights.repa:
            target = encoder.encoder_features(images, encoder.depth - 1).detach()
            repa = repa_align_loss(hidden, target)
    else:
        flow = flow_matching_loss(model.decoder(x_t, t, cond), data, noise)
        perceptual = repa = zero

    total = weights.flow * flow + weights.perceptual * perceptual + weights.repa * repa
    report = DecoderLossReport.from_terms(float(flow), float(perceptual), float(repa), weights)
    return total, report


def decoder_train_step(
    model: ReconstructionModel,
    encoder: UnderstandingEncoder,
    optimizer: torch.optim.Optimizer,
    images: torch.Tensor,
    latents: torch.Tensor,
    weights: DecoderLossWeights,
    generator: torch.Generator,
    batch_id: int,
    targets: Optional[torch.Tensor] = None,
) -> DecoderLossReport:
    """
    One optimizer step on reducer + decoder.

    Raises
    ------
    TrainingError
        If the loss is not finite; ``batch_id`` is reported.
    """
    model.train()
    total, report = compute_decoder_loss(model, encoder, images, latents, weights, generator=generator, targets=targets)
    if not torch.isfinite(total):
        raise TrainingError("decoder loss is not finite", step=batch_id)
    optimizer.zero_grad(set_to_none=True)
    total.backward()
    optimizer.step()
    return report


# -----------------------------
# DECODING
# -----------------------------


def initial_noise(shape: Tuple[int, ...], seed: int, like: torch.Tensor) -> torch.Tensor:
    """Starting point of every decode: unit Gaussian drawn from ``seed``."""
    return torch.randn(shape, generator=torch_generator(seed, 7)).to(like)


@torch.no_grad()
def decode(
    model: Optional[ReconstructionModel],
    reduced: torch.Tensor,
    steps: int = config.DECODE_STEPS,
    seed: int = 0,
    vae: Optional[nn.Module] = None,
    field: Optional[Callable[[torch.Tensor, torch.Tensor], torch.Tensor]] = None,
) -> torch.Tensor:
    """
    Decode raw reduced latents ``(B, N, D/r)`` to images ``(B, 3, H, W)``
    by Euler integration from noise at t = 0 to t = 1, clamped to [-1, 1].

    ``field`` replaces the learned velocity (used with oracle fields).
    """
    if steps < 1:
        raise ValidationError("steps", f"must be >= 1, got {steps}")
    kind = model.kind if model is not None else "pdd"
    batch = reduced.shape[0]
    if field is None:
        if model is None:
            raise DependencyError("decode needs a trained model or an explicit field")
        model.eval()
        cond = model.standardize(reduced)
        field = lambda x, t: model.decoder(x, t, cond)  # noqa: E731

    if kind == "pdd":
        x = euler_integrate(field, initial_noise((batch, *IMAGE_SHAPE), seed, reduced), steps)
        return x.clamp(-1.0, 1.0)

    if vae is None:
        raise DependencyError("LDM decoding needs the VAE it was trained against")
    tokens = model.decoder.latent_pos.shape[1]
    channels = model.decoder.latent_out.out_features
    y = euler_integrate(field, initial_noise((batch, tokens, channels), seed, reduced), steps)
    return vae.decode_tokens(model.target_stats.destandardize(y)).clamp(-1.0, 1.0)


@torch.no_grad()
def reconstruct(
    model: ReconstructionModel,
    latents: torch.Tensor,
    steps: int,
    seed: int,
    vae: Optional[nn.Module] = None,
    batch_size: int = 256,
) -> torch.Tensor:
    """Decode the reduced version of understanding latents ``(B, N, D)``."""
    was_training = model.training
    model.eval()
    device = next(model.parameters()).device
    out = []
    for i in range(0, len(latents), batch_size):
        z = latents[i:i + batch_size].to(device)
        out.append(decode(model, model.reduce_latent(z), steps, seed + i, vae=vae).cpu())
    model.train(was_training)
    return torch.cat(out)


def reconstruction_mse(
    model: ReconstructionModel,
    images: torch.Tensor,
    latents: torch.Tensor,
    steps: int,
    seed: int,
    vae: Optional[nn.Module] = None,
) -> float:
    recon = reconstruct(model, latents, steps, seed, vae=vae)
    return float(((recon - images.cpu()) ** 2).mean())


# -----------------------------
# TRAINING
# -----------------------------


@dataclass
class ReconstructionResult:
    model: ReconstructionModel
    history: List[Dict[str, float]] = field(default_factory=list)
    final_val_mse: float = float("nan")


def _vae_targets(vae: nn.Module, images: torch.Tensor, batch_size: int = 256) -> torch.Tensor:
    device = next(vae.parameters()).device
    with torch.no_grad():
        return torch.cat([vae.encode_tokens(images[i:i + batch_size].to(device)).cpu() for i in range(0, len(images), batch_size)])


def train_reconstruction(
    model: ReconstructionModel,
    encoder: UnderstandingEncoder,
    train: ShapesDataset,
    val: ShapesDataset,
    cfg: DecoderConfig,
    seed: int = 0,
    device: str = "cpu",
    vae: Optional[nn.Module] = None,
    steps: Optional[int] = None,
) -> ReconstructionResult:
    """
    Jointly train reducer and decoder, tracking validation reconstruction
    MSE every ``cfg.eval_every`` steps; finally fit the exact train-split
    latent statistics and freeze the model.
    """
    encoder.require_frozen()
    if model.kind == "ldm" and vae is None:
        raise DependencyError("LDM decoder training needs a trained VAE")
    steps = cfg.steps if steps is None else steps
    model.to(device)

    train_images = train.images()
    train_latents = encode_dataset(encoder, train_images)
    n_val = min(config.RECON_EVAL_IMAGES, len(val))
    val_images = val.images(range(n_val))
    val_latents = encode_dataset(encoder, val_images)

    if isinstance(model.reducer, PCAReducer) and not bool(model.reducer.components.abs().sum()):
        fitted = pca_fit(train_latents, model.reducer.spec)
        model.reducer.load_state_dict(fitted.state_dict())

    targets = None
    if model.kind == "ldm":
        raw = _vae_targets(vae, train_images)
        target_stats = fit_latent_stats(raw)
        model.target_mean.copy_(target_stats.mean)
        model.target_std.copy_(target_stats.std)
        targets = target_stats.standardize(raw)

    weights = DecoderLossWeights(perceptual=cfg.lambda_perceptual, repa=cfg.lambda_repa)
    optimizer = torch.optim.AdamW(model.trainable_parameters(), lr=cfg.learning_rate, betas=config.ADAM_BETAS, weight_decay=0.0)
    result = ReconstructionResult(model=model)

    for step in tqdm(range(steps), desc=f"train {model.kind}/{model.reducer.variant}", leave=False):
        idx = batch_indices(len(train), cfg.batch_size, seed, step)
        report = decoder_train_step(
            model,
            encoder,
            optimizer,
            train_images[idx].to(device),
            train_latents[idx].to(device),
            weights,
            torch_generator(seed, step, 3, device=device),
            batch_id=step,
            targets=None if targets is None else targets[idx].to(device),
        )
        row: Dict[str, float] = {"step": step, "flow": report.flow, "perceptual": report.perceptual, "repa": report.repa, "total": report.total}
        if cfg.eval_every and (step + 1) % cfg.eval_every == 0:
            row["val_mse"] = reconstruction_mse(model, val_images, val_latents, cfg.decode_steps, seed, vae=vae)
            logger.info("%s step %d: loss %.4f val mse %.4f", model.kind, step + 1, report.total, row["val_mse"])
        result.history.append(row)

    model.eval()
    with torch.no_grad():
        reduced = torch.cat([model.reduce_latent(train_latents[i:i + 512].to(device)).cpu() for i in range(0, len(train_latents), 512)])
    model.set_stats(fit_latent_stats(reduced))
    freeze_module(model)
    result.final_val_mse = reconstruction_mse(model, val_images, val_latents, cfg.decode_steps, seed, vae=vae)
    logger.info("%s/%s final val reconstruction mse %.4f", model.kind, model.reducer.variant, result.final_val_mse)
    return result


def train_pdd_decoder(
    encoder: UnderstandingEncoder,
    train: ShapesDataset,
    val: ShapesDataset,
    cfg: DecoderConfig,
    variant: str = "mlp",
    ratio: int = config.REDUCTION_RATIO,
    seed: int = 0,
    device: str = "cpu",
    steps: Optional[int] = None,
) -> ReconstructionResult:
    spec = ReducerSpec(encoder.embed_dim, ratio)
    model = build_reconstruction_model("pdd", variant, spec, cfg, seed=seed)
    return train_reconstruction(model, encoder, train, val, cfg, seed=seed, device=device, steps=steps)


def train_ldm_decoder(
    vae: Optional[nn.Module],
    encoder: UnderstandingEncoder,
    train: ShapesDataset,
    val: ShapesDataset,
    cfg: DecoderConfig,
    variant: str = "mlp",
    ratio: int = config.REDUCTION_RATIO,
    seed: int = 0,
    device: str = "cpu",
    steps: Optional[int] = None,
) -> ReconstructionResult:
    """
    Flow matching in the VAE latent space conditioned on reduced latents;
    decoding samples a VAE latent and runs the VAE decoder.

    Raises
    ------
    DependencyError
        If no trained VAE is given.
    """
    if vae is None:
        raise DependencyError("train_ldm_decoder needs a trained VAE")
    spec = ReducerSpec(encoder.embed_dim, ratio)
    model = build_reconstruction_model("ldm", variant, spec, cfg, vae_channels=vae.latent_channels, seed=seed)
    return train_reconstruction(model, encoder, train, val, cfg, seed=seed, device=device, vae=vae, steps=steps)


# -----------------------------
# CHECKPOINTS
# -----------------------------


def save_reconstruction(
    stem: Path | str,
    result: ReconstructionResult,
    encoder: UnderstandingEncoder,
    cfg: DecoderConfig,
    vae_hash: Optional[str] = None,
) -> str:
    model = result.model
    return save_checkpoint(
        stem,
        model.state_dict(),
        config=cfg,
        metadata={
            "kind": model.kind,
            "variant": model.reducer.variant,
            "input_dim": model.reducer.spec.input_dim,
            "ratio": model.reducer.spec.ratio,
            "encoder_hash": encoder.param_hash,
            "vae_hash": vae_hash,
            "steps": len(result.history),
            "final_val_mse": result.final_val_mse,
            "history": result.history,
        },
    )


def load_reconstruction(
    stem: Path | str,
    encoder: UnderstandingEncoder,
    device: str = "cpu",
    vae: Optional[nn.Module] = None,
) -> Tuple[ReconstructionModel, Dict]:
    """
    Rebuild a frozen reconstruction model.

    Raises
    ------
    StageMismatchError
        If it was trained against a different encoder (or VAE).
    """
    tensors, manifest = load_checkpoint(stem)
    meta = manifest["metadata"]
    require_hash("encoder", meta["encoder_hash"], encoder.param_hash)
    if meta["kind"] == "ldm":
        if vae is None:
            raise DependencyError(f"{stem} is an LDM decoder and needs its VAE")
        require_hash("vae", meta["vae_hash"], module_hash(vae))
    cfg = DecoderConfig(**manifest["config"])
    spec = ReducerSpec(meta["input_dim"], meta["ratio"])
    channels = vae.latent_channels if vae is not None else config.VAE_LATENT_CHANNELS
    model = build_reconstruction_model(meta["kind"], meta["variant"], spec, cfg, vae_channels=channels)
    model.load_state_dict(tensors)
    freeze_module(model)
    return model.to(device), manifest
