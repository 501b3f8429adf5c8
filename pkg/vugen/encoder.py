"""
vugen/encoder.py

The frozen understanding encoder f_und: a patch embedder plus a small
transformer, pretrained on a proxy task whose labels come for free from the
rasterizer:

- pooled-embedding multi-label attribute prediction (shapes / colors present)
- per-patch color classification (pushes spatial detail into each token)

After pretraining the encoder is frozen and hashed; every later stage
records that hash and refuses to run against a different encoder.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import torch
import torch.nn.functional as F
from einops import rearrange
from torch import nn
from tqdm import tqdm

from vugen import config
from vugen.checkpoints import load_checkpoint, module_hash, save_checkpoint
from vugen.config import EncoderConfig
from vugen.errors import EncoderStateError, ShapeError, StageMismatchError, TrainingError, ValidationError
from vugen.layers import TransformerBlock, freeze_module
from vugen.seeding import batch_indices, init_seed
from vugen.toydata import N_ATTRIBUTES, N_PATCH_CLASSES, ShapesDataset

logger = logging.getLogger(__name__)


def patchify(images: torch.Tensor, patch: int) -> torch.Tensor:
    """
    Split ``(B, 3, H, W)`` images into ``(B, N, P*P*3)`` rows, raster order,
    each row the flattened P x P x 3 patch.
    """
    squeeze = images.ndim == 3
    if squeeze:
        images = images.unsqueeze(0)
    h, w = images.shape[-2:]
    if h % patch or w % patch:
        raise ShapeError(f"image side {h}x{w} not divisible by patch size {patch}")
    out = rearrange(images, "b c (h p1) (w p2) -> b (h w) (p1 p2 c)", p1=patch, p2=patch)
    return out[0] if squeeze else out


def unpatchify(patches: torch.Tensor, patch: int, side: int = config.IMAGE_SIZE) -> torch.Tensor:
    squeeze = patches.ndim == 2
    if squeeze:
        patches = patches.unsqueeze(0)
    grid = side // patch
    if patches.shape[1] != grid * grid:
        raise ShapeError(f"expected {grid * grid} patches for side {side}, got {patches.shape[1]}")
    out = rearrange(patches, "b (h w) (p1 p2 c) -> b c (h p1) (w p2)", h=grid, p1=patch, p2=patch)
    return out[0] if squeeze else out


class UnderstandingEncoder(nn.Module):
    """Patch embedder + transformer; ``encode`` returns the N x D latent grid."""

    def __init__(
        self,
        patch_size: int = config.PATCH_SIZE,
        embed_dim: int = config.ENCODER_EMBED_DIM,
        depth: int = config.ENCODER_DEPTH,
        heads: int = config.ENCODER_HEADS,
        image_size: int = config.IMAGE_SIZE,
    ) -> None:
        super().__init__()
        if image_size % patch_size:
            raise ShapeError(f"image size {image_size} not divisible by patch size {patch_size}")
        self.patch_size = patch_size
        self.embed_dim = embed_dim
        self.depth = depth
        self.n_patches = (image_size // patch_size) ** 2
        self.patch_embed = nn.Linear(3 * patch_size * patch_size, embed_dim)
        self.pos_embed = nn.Parameter(torch.randn(1, self.n_patches, embed_dim) * 0.02)
        self.blocks = nn.ModuleList([TransformerBlock(embed_dim, heads) for _ in range(depth)])
        self.norm = nn.LayerNorm(embed_dim)
        # proxy-task probes
        self.attribute_head = nn.Linear(embed_dim, N_ATTRIBUTES)
        self.patch_head = nn.Linear(embed_dim, N_PATCH_CLASSES)
        self.frozen = False
        self.param_hash: Optional[str] = None

    @classmethod
    def from_config(cls, cfg: EncoderConfig) -> "UnderstandingEncoder":
        return cls(patch_size=cfg.patch_size, embed_dim=cfg.embed_dim, depth=cfg.depth, heads=cfg.heads)

    def freeze(self) -> "UnderstandingEncoder":
        freeze_module(self)
        self.frozen = True
        self.param_hash = module_hash(self)
        return self

    def require_frozen(self) -> None:
        if not self.frozen:
            raise EncoderStateError("understanding encoder must be pretrained and frozen before use")

    def verify_hash(self) -> str:
        """Recompute the parameter hash; a frozen encoder must never drift."""
        current = module_hash(self)
        if current != self.param_hash:
            raise StageMismatchError("frozen encoder parameters changed after freezing")
        return current

    def hidden_states(self, patches: torch.Tensor, zero_positional: bool = False) -> List[torch.Tensor]:
        """Per-layer hidden states for already patchified input."""
        h = self.patch_embed(patches)
        if not zero_positional:
            h = h + self.pos_embed
        states = []
        for block in self.blocks:
            h = block(h)
            states.append(h)
        return states

    def encode_patches(self, patches: torch.Tensor, zero_positional: bool = False) -> torch.Tensor:
        return self.norm(self.hidden_states(patches, zero_positional)[-1])

    def encode(self, images: torch.Tensor) -> torch.Tensor:
        """UnderstandingLatent ``(B, N, D)`` for ``(B, 3, H, W)`` images."""
        self.require_frozen()
        return self.encode_patches(patchify(images, self.patch_size))

    def encoder_features(self, images: torch.Tensor, layer: int) -> torch.Tensor:
        """Hidden states ``(B, N, D)`` after block ``layer`` (0-based)."""
        if not 0 <= layer < self.depth:
            raise ValidationError("layer", f"index {layer} out of range 0..{self.depth - 1}")
        patches = patchify(images, self.patch_size)
        h = self.patch_embed(patches) + self.pos_embed
        for block in self.blocks[: layer + 1]:
            h = block(h)
        return h

    def pooled(self, images: torch.Tensor) -> torch.Tensor:
        """Mean over patches of the latent grid, ``(B, D)``."""
        return self.encode(images).mean(dim=1)

    def probe_logits(self, latent: torch.Tensor) -> Dict[str, torch.Tensor]:
        return {
            "attributes": self.attribute_head(latent.mean(dim=1)),
            "patches": self.patch_head(latent),
        }


@torch.no_grad()
def encode_dataset(encoder: UnderstandingEncoder, images: torch.Tensor, batch_size: int = 256) -> torch.Tensor:
    """Encode a stack of images in batches (device follows the encoder)."""
    device = next(encoder.parameters()).device
    chunks = [encoder.encode(images[i:i + batch_size].to(device)).cpu() for i in range(0, len(images), batch_size)]
    return torch.cat(chunks)


@dataclass
class ProbeReport:
    attribute_accuracy: float
    shape_accuracy: float
    color_accuracy: float
    patch_accuracy: float

    def as_dict(self) -> Dict[str, float]:
        return dict(self.__dict__)


@torch.no_grad()
def linear_probe_accuracy(encoder: UnderstandingEncoder, dataset: ShapesDataset, batch_size: int = 256) -> ProbeReport:
    """Accuracy of the pooled attribute probes and the per-patch color probe."""
    device = next(encoder.parameters()).device
    attrs = dataset.attributes
    labels = torch.from_numpy(dataset.patch_labels)
    attr_hits, patch_hits = [], []
    for i in range(0, len(dataset), batch_size):
        images = dataset.images(range(i, min(i + batch_size, len(dataset)))).to(device)
        latent = encoder.encode_patches(patchify(images, encoder.patch_size))
        logits = encoder.probe_logits(latent)
        attr_hits.append(((logits["attributes"] > 0).float().cpu() == attrs[i:i + batch_size]).float())
        patch_hits.append((logits["patches"].argmax(-1).cpu() == labels[i:i + batch_size]).float())
    attr = torch.cat(attr_hits)
    n_shapes = len(config.SHAPES)
    return ProbeReport(
        attribute_accuracy=float(attr.mean()),
        shape_accuracy=float(attr[:, :n_shapes].mean()),
        color_accuracy=float(attr[:, n_shapes:].mean()),
        patch_accuracy=float(torch.cat(patch_hits).mean()),
    )


@dataclass
class EncoderResult:
    encoder: UnderstandingEncoder
    probes: ProbeReport
    losses: List[float] = field(default_factory=list)


def pretrain_encoder(
    train: ShapesDataset,
    val: ShapesDataset,
    cfg: EncoderConfig,
    seed: int = 0,
    device: str = "cpu",
) -> EncoderResult:
    """
    Train the proxy objective for ``cfg.steps`` steps, record val probe
    accuracies, then freeze and hash the encoder.

    Raises
    ------
    TrainingError
        If the loss becomes non-finite.
    """
    init_seed(seed, 101)
    encoder = UnderstandingEncoder.from_config(cfg).to(device)
    optimizer = torch.optim.AdamW(encoder.parameters(), lr=cfg.learning_rate, weight_decay=0.01)
    attrs = train.attributes
    labels = torch.from_numpy(train.patch_labels)
    losses: List[float] = []

    encoder.train()
    for step in tqdm(range(cfg.steps), desc="pretrain encoder", leave=False):
        idx = batch_indices(len(train), cfg.batch_size, seed, step)
        images = train.images(idx).to(device)
        latent = encoder.encode_patches(patchify(images, encoder.patch_size))
        logits = encoder.probe_logits(latent)
        loss = F.binary_cross_entropy_with_logits(logits["attributes"], attrs[idx].to(device)) + F.cross_entropy(
            logits["patches"].reshape(-1, N_PATCH_CLASSES), labels[idx].reshape(-1).to(device)
        )
        if not torch.isfinite(loss):
            raise TrainingError("encoder pretraining loss is not finite", step=step)
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()
        losses.append(float(loss))
        if step % config.LOG_EVERY == 0:
            logger.info("encoder step %d loss %.4f", step, losses[-1])

    encoder.freeze()
    probes = linear_probe_accuracy(encoder, val)
    logger.info("encoder probes on val: %s (hash %s)", probes.as_dict(), encoder.param_hash[:12])
    return EncoderResult(encoder=encoder, probes=probes, losses=losses)


def save_encoder(stem: Path | str, result: EncoderResult, cfg: EncoderConfig) -> str:
    return save_checkpoint(
        stem,
        result.encoder.state_dict(),
        config=cfg,
        metadata={"probes": result.probes.as_dict(), "steps": len(result.losses)},
    )


def load_encoder(stem: Path | str, device: str = "cpu") -> UnderstandingEncoder:
    """Rebuild a frozen encoder from its checkpoint."""
    tensors, manifest = load_checkpoint(stem)
    encoder = UnderstandingEncoder.from_config(EncoderConfig(**manifest["config"]))
    encoder.load_state_dict(tensors)
    encoder.freeze()
    if encoder.param_hash != manifest["content_hash"]:
        raise StageMismatchError(f"encoder at {stem} does not hash to its recorded value")
    return encoder.to(device)

