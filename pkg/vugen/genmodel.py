"""
vugen/genmodel.py

Stage one, P(z~ | c): a two-tower mixture-of-transformers generator that
predicts rectified-flow velocity over standardized latent grids.

The text tower is pretrained once on caption modeling and then frozen. The
generation tower starts as a copy of it and is the only trainable part,
together with latent in/out projections and a time embedding. The towers
keep separate weights per modality but share one masked self-attention
over the concatenated ``[text, latent]`` sequence: text queries are causal
over text, latent queries see everything.

The same machinery trains over reduced understanding latents (VUGEN) and
over VAE latents (the baselines); only the ``LatentCorpus`` differs.
"""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn
from tqdm import tqdm

from vugen import config
from vugen.checkpoints import (
    Tensors,
    load_checkpoint,
    module_hash,
    require_hash,
    save_checkpoint,
    split_prefix,
    with_prefix,
)
from vugen.config import GeneratorConfig, SamplerConfig
from vugen.decoder import ReconstructionModel, decode, repa_align_loss
from vugen.ema import EmaState, ema_step, init_ema, trainable_state, with_shadow
from vugen.encoder import UnderstandingEncoder, encode_dataset
from vugen.errors import DependencyError, StageMismatchError, TrainingError, ValidationError
from vugen.flow import cfg_velocity, euler_integrate, flow_matching_loss, interpolate, sample_noise, sample_times
from vugen.layers import TimestepEmbedder, TransformerBlock, as_time_vector, freeze_module, masked_attention
from vugen.reducer import LatentStats
from vugen.seeding import batch_indices, init_seed, torch_generator
from vugen.toydata import VOCAB_SIZE, ShapesDataset, null_tokens, tokenize

logger = logging.getLogger(__name__)


# -----------------------------
# ATTENTION MASK
# -----------------------------


def build_attention_mask(text_len: int, vision_len: int, device: Optional[torch.device] = None) -> torch.Tensor:
    """
    Boolean ``(T+V, T+V)`` mask, rows are queries, True means "may attend".

    Text query ``i`` sees text keys ``j <= i`` only; vision queries see all
    text and all vision keys.
    """
    if text_len < 0 or vision_len < 0:
        raise ValidationError("mask", f"lengths must be >= 0, got ({text_len}, {vision_len})")
    n = text_len + vision_len
    mask = torch.zeros(n, n, dtype=torch.bool, device=device)
    mask[:text_len, :text_len] = torch.ones(text_len, text_len, dtype=torch.bool, device=device).tril()
    mask[text_len:, :] = True
    return mask


def validate_tokens(tokens: torch.Tensor) -> torch.Tensor:
    if tokens.dtype not in (torch.int64, torch.int32):
        raise ValidationError("tokens", f"expected integer ids, got {tokens.dtype}")
    if tokens.numel() and (int(tokens.min()) < 0 or int(tokens.max()) >= VOCAB_SIZE):
        raise ValidationError("tokens", f"ids must lie in [0, {VOCAB_SIZE}), got range [{int(tokens.min())}, {int(tokens.max())}]")
    return tokens.long()


# -----------------------------
# TEXT TOWER
# -----------------------------


class TextTower(nn.Module):
    """Small causal language model over the caption vocabulary."""

    def __init__(
        self,
        width: int = config.GENERATOR_WIDTH,
        depth: int = config.GENERATOR_DEPTH,
        heads: int = config.GENERATOR_HEADS,
        text_len: int = config.TEXT_LEN,
        vocab_size: int = VOCAB_SIZE,
    ) -> None:
        super().__init__()
        self.width = width
        self.depth = depth
        self.heads = heads
        self.text_len = text_len
        self.token_embed = nn.Embedding(vocab_size, width)
        self.pos_embed = nn.Parameter(torch.randn(1, text_len, width) * 0.02)
        self.blocks = nn.ModuleList([TransformerBlock(width, heads) for _ in range(depth)])
        self.norm = nn.LayerNorm(width)
        self.lm_head = nn.Linear(width, vocab_size)
        self.register_buffer("causal_mask", build_attention_mask(text_len, 0), persistent=False)

    @classmethod
    def from_config(cls, cfg: GeneratorConfig) -> "TextTower":
        return cls(width=cfg.width, depth=cfg.depth, heads=cfg.heads)

    def embed(self, tokens: torch.Tensor) -> torch.Tensor:
        tokens = validate_tokens(tokens)
        return self.token_embed(tokens) + self.pos_embed[:, : tokens.shape[1]]

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        h = self.embed(tokens)
        mask = self.causal_mask[: tokens.shape[1], : tokens.shape[1]]
        for block in self.blocks:
            h = block(h, mask)
        return self.lm_head(self.norm(h))


@dataclass
class TextTowerResult:
    tower: TextTower
    losses: List[float] = field(default_factory=list)
    param_hash: str = ""


def pretrain_text_tower(
    train: ShapesDataset,
    cfg: GeneratorConfig,
    seed: int = 0,
    device: str = "cpu",
) -> TextTowerResult:
    """Next-token modeling on captions for ``cfg.text_steps`` steps, then freeze."""
    init_seed(seed, 301)
    tower = TextTower.from_config(cfg).to(device)
    tokens = train.tokens
    optimizer = torch.optim.AdamW(tower.parameters(), lr=cfg.learning_rate, betas=(cfg.beta1, cfg.beta2), weight_decay=cfg.weight_decay)
    losses: List[float] = []
    tower.train()
    for step in tqdm(range(cfg.text_steps), desc="pretrain text tower", leave=False):
        batch = tokens[batch_indices(len(tokens), cfg.batch_size, seed, step)].to(device)
        logits = tower(batch[:, :-1])
        loss = F.cross_entropy(logits.reshape(-1, logits.shape[-1]), batch[:, 1:].reshape(-1))
        if not torch.isfinite(loss):
            raise TrainingError("text tower loss is not finite", step=step)
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()
        losses.append(float(loss))
        if step % config.LOG_EVERY == 0:
            logger.info("text tower step %d loss %.4f", step, losses[-1])
    freeze_module(tower)
    return TextTowerResult(tower=tower, losses=losses, param_hash=module_hash(tower))


def save_text_tower(stem: Path | str, result: TextTowerResult, cfg: GeneratorConfig) -> str:
    return save_checkpoint(stem, result.tower.state_dict(), config=cfg, metadata={"steps": len(result.losses), "losses": result.losses[-10:]})


def load_text_tower(stem: Path | str, device: str = "cpu") -> TextTower:
    tensors, manifest = load_checkpoint(stem)
    tower = TextTower.from_config(GeneratorConfig(**manifest["config"]))
    tower.load_state_dict(tensors)
    return freeze_module(tower).to(device)


# -----------------------------
# MIXTURE OF TRANSFORMERS
# -----------------------------


def mot_layer(
    text_block: TransformerBlock,
    vision_block: TransformerBlock,
    h_text: torch.Tensor,
    h_vision: torch.Tensor,
    mask: torch.Tensor,
) -> Tuple[torch.Tensor, torch.Tensor]:
    """One layer with per-modality norms / projections / MLPs and joint attention."""
    n_text = h_text.shape[1]
    qt, kt, vt = text_block.attn.project_qkv(text_block.norm1(h_text))
    qv, kv, vv = vision_block.attn.project_qkv(vision_block.norm1(h_vision))
    out = masked_attention(torch.cat([qt, qv], dim=2), torch.cat([kt, kv], dim=2), torch.cat([vt, vv], dim=2), mask)
    h_text = h_text + text_block.attn.merge(out[:, :, :n_text])
    h_vision = h_vision + vision_block.attn.merge(out[:, :, n_text:])
    h_text = h_text + text_block.mlp(text_block.norm2(h_text))
    h_vision = h_vision + vision_block.mlp(vision_block.norm2(h_vision))
    return h_text, h_vision


class MoTGenerator(nn.Module):
    """
    Velocity predictor ``v(z~_t, t | c)`` over latent grids ``(B, N, C)``.

    Parameters
    ----------
    text_tower : TextTower
        Pretrained tower; frozen here and never updated.
    latent_dim : int
        Channels C of the latent grid (D/r for VUGEN, 4 for VAE latents).
    n_latent_tokens : int
        Tokens N per latent grid.
    """

    def __init__(self, text_tower: TextTower, latent_dim: int, n_latent_tokens: int = config.N_PATCHES) -> None:
        super().__init__()
        width = text_tower.width
        self.latent_dim = latent_dim
        self.n_latent_tokens = n_latent_tokens
        self.text_tower = freeze_module(text_tower)
        self.vision_blocks = copy.deepcopy(text_tower.blocks)
        for p in self.vision_blocks.parameters():
            p.requires_grad_(True)
        self.latent_in = nn.Linear(latent_dim, width)
        self.latent_pos = nn.Parameter(torch.randn(1, n_latent_tokens, width) * 0.02)
        self.time_embed = TimestepEmbedder(width)
        self.vision_norm = nn.LayerNorm(width)
        self.latent_out = nn.Linear(width, latent_dim)
        self.register_buffer("mask", build_attention_mask(text_tower.text_len, n_latent_tokens), persistent=False)

    @property
    def depth(self) -> int:
        return len(self.vision_blocks)

    def text_hash(self) -> str:
        return module_hash(self.text_tower)

    def train(self, mode: bool = True) -> "MoTGenerator":
        super().train(mode)
        self.text_tower.eval()
        return self

    def forward(
        self,
        tokens: torch.Tensor,
        z_t: torch.Tensor,
        t: torch.Tensor | float,
        hidden_layer: Optional[int] = None,
    ) -> torch.Tensor | Tuple[torch.Tensor, torch.Tensor]:
        """
        Returns the velocity shaped like ``z_t``; with ``hidden_layer`` set,
        also the generation-tower hidden states after that block.
        """
        if hidden_layer is not None and not 0 <= hidden_layer < self.depth:
            raise ValidationError("align_layer", f"index {hidden_layer} out of range 0..{self.depth - 1}")
        if z_t.shape[1:] != (self.n_latent_tokens, self.latent_dim):
            raise ValidationError("z_t", f"shape {tuple(z_t.shape)} != (B, {self.n_latent_tokens}, {self.latent_dim})")
        h_text = self.text_tower.embed(tokens)
        temb = self.time_embed(as_time_vector(t, z_t.shape[0], z_t))
        h_vision = self.latent_in(z_t) + self.latent_pos + temb[:, None]
        n = h_text.shape[1] + h_vision.shape[1]
        mask = self.mask if self.mask.shape[0] == n else build_attention_mask(h_text.shape[1], h_vision.shape[1], z_t.device)

        hidden = None
        for i, (text_block, vision_block) in enumerate(zip(self.text_tower.blocks, self.vision_blocks)):
            h_text, h_vision = mot_layer(text_block, vision_block, h_text, h_vision, mask)
            if i == hidden_layer:
                hidden = h_vision
        velocity = self.latent_out(self.vision_norm(h_vision))
        if hidden_layer is not None:
            return velocity, hidden
        return velocity


def predict_velocity(generator: MoTGenerator, tokens: torch.Tensor, z_t: torch.Tensor, t: torch.Tensor | float) -> torch.Tensor:
    return generator(tokens, z_t, t)


# -----------------------------
# FLOW OBJECTIVE
# -----------------------------


@dataclass
class FlowDraw:
    """Randomness of one flow-loss evaluation."""

    t: torch.Tensor
    noise: torch.Tensor
    drop: torch.Tensor

    @classmethod
    def sample(cls, latents: torch.Tensor, p_drop: float, generator: torch.Generator) -> "FlowDraw":
        t = sample_times(latents.shape[0], generator, latents)
        noise = sample_noise(latents.shape, generator, latents)
        drop = torch.rand(latents.shape[0], generator=generator, device=generator.device).to(latents.device) < p_drop
        return cls(t=t, noise=noise, drop=drop)


def drop_prompts(tokens: torch.Tensor, drop: torch.Tensor) -> torch.Tensor:
    """Replace dropped rows by the NULL prompt."""
    null_row = torch.as_tensor(null_tokens(tokens.shape[1]), device=tokens.device)
    return torch.where(drop[:, None], null_row.expand_as(tokens), tokens)


def flow_loss_terms(
    generator: MoTGenerator,
    tokens: torch.Tensor,
    latents: torch.Tensor,
    draw: FlowDraw,
    hidden_layer: Optional[int] = None,
) -> Tuple[torch.Tensor, Optional[torch.Tensor]]:
    z_t = interpolate(latents, draw.noise, draw.t)
    out = generator(drop_prompts(tokens, draw.drop), z_t, draw.t, hidden_layer=hidden_layer)
    velocity, hidden = out if hidden_layer is not None else (out, None)
    return flow_matching_loss(velocity, latents, draw.noise), hidden


def flow_loss(
    generator: MoTGenerator,
    tokens: torch.Tensor,
    latents: torch.Tensor,
    p_drop: float = config.PROMPT_DROP_PROB,
    rng: Optional[torch.Generator] = None,
    draw: Optional[FlowDraw] = None,
) -> torch.Tensor:
    """Mean ``|z~ - eps - v(z~_t, t | c)|^2`` with prompt dropout."""
    if draw is None:
        if rng is None:
            raise ValidationError("rng", "needed when no draw is given")
        draw = FlowDraw.sample(latents, p_drop, rng)
    return flow_loss_terms(generator, tokens, latents, draw)[0]


# -----------------------------
# SAMPLING
# -----------------------------


def prompt_tokens(prompts: Sequence[str], device: torch.device | str = "cpu") -> torch.Tensor:
    """Token ids per prompt; an empty prompt is the NULL prompt."""
    rows = [tokenize(p) if p.strip() else null_tokens() for p in prompts]
    return torch.tensor(rows, dtype=torch.long, device=device)


def guided_field(
    generator: MoTGenerator,
    tokens: torch.Tensor,
    scale: float,
) -> Callable[[torch.Tensor, torch.Tensor], torch.Tensor]:
    """Velocity field with classifier-free guidance, cond/uncond batched together."""
    null = torch.as_tensor(null_tokens(tokens.shape[1]), device=tokens.device).expand_as(tokens)
    if scale < 0:
        raise ValidationError("cfg_scale", f"must be >= 0, got {scale}")

    def field(z: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        if scale == 1.0:
            return generator(tokens, z, t)
        if scale == 0.0:
            return generator(null, z, t)
        v = generator(torch.cat([tokens, null]), torch.cat([z, z]), torch.cat([t, t]))
        v_cond, v_uncond = v.chunk(2)
        return cfg_velocity(v_cond, v_uncond, scale)

    return field


def sampler_noise(shape: Tuple[int, ...], seed: int, like: torch.Tensor | None = None) -> torch.Tensor:
    noise = torch.randn(shape, generator=torch_generator(seed, 11), dtype=torch.float64 if like is None else like.dtype)
    return noise if like is None else noise.to(like.device)


@torch.no_grad()
def sample_latents(
    generator: Optional[MoTGenerator],
    sampler: SamplerConfig,
    stats: Optional[LatentStats] = None,
    prompts: Optional[Sequence[str]] = None,
    field: Optional[Callable[[torch.Tensor, torch.Tensor], torch.Tensor]] = None,
    shape: Optional[Tuple[int, ...]] = None,
) -> torch.Tensor:
    """
    Euler-integrate from ``N(0, I)`` noise (seeded by ``sampler.seed``) to
    t = 1 and destandardize with ``stats`` when given.

    ``prompts`` defaults to ``sampler.n_images`` copies of ``sampler.prompt``
    (the empty prompt is the NULL prompt). ``field`` replaces the learned
    guided field; ``shape`` is then required when there is no generator.
    """
    if sampler.steps < 1:
        raise ValidationError("steps", f"must be >= 1, got {sampler.steps}")
    if field is None:
        if generator is None:
            raise DependencyError("sample_latents needs a generator or an explicit field")
        generator.eval()
        prompts = list(prompts) if prompts is not None else [sampler.prompt] * sampler.n_images
        device = generator.latent_pos.device
        tokens = prompt_tokens(prompts, device)
        field = guided_field(generator, tokens, sampler.cfg_scale)
        shape = (len(prompts), generator.n_latent_tokens, generator.latent_dim)
        like = generator.latent_pos
    else:
        if shape is None:
            raise ValidationError("shape", "required with an injected field")
        like = generator.latent_pos if generator is not None else None
    z = euler_integrate(field, sampler_noise(shape, sampler.seed, like), sampler.steps)
    return stats.destandardize(z) if stats is not None else z


# -----------------------------
# TRAINING
# -----------------------------


@dataclass
class LatentCorpus:
    """Training targets for the generator: prompts and standardized latents."""

    tokens: torch.Tensor
    latents: torch.Tensor
    stats: LatentStats
    upstream: Dict[str, str]
    target: str = "vugen"
    align_targets: Optional[torch.Tensor] = None

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def latent_shape(self) -> Tuple[int, int]:
        return tuple(self.latents.shape[1:])


@torch.no_grad()
def build_vugen_corpus(
    encoder: UnderstandingEncoder,
    reconstruction: ReconstructionModel,
    dataset: ShapesDataset,
    batch_size: int = 512,
) -> LatentCorpus:
    """Reduced understanding latents of every training image, standardized."""
    encoder.require_frozen()
    if not bool(reconstruction.stats_fitted):
        raise DependencyError("reconstruction model has no fitted latent statistics")
    device = next(reconstruction.parameters()).device
    latents = encode_dataset(encoder, dataset.images())
    reduced = torch.cat(
        [reconstruction.reduce_latent(latents[i:i + batch_size].to(device)).cpu() for i in range(0, len(latents), batch_size)]
    )
    stats = LatentStats(mean=reconstruction.latent_mean.cpu(), std=reconstruction.latent_std.cpu())
    return LatentCorpus(
        tokens=dataset.tokens,
        latents=stats.standardize(reduced),
        stats=stats,
        upstream={"encoder": encoder.param_hash, "reconstruction": module_hash(reconstruction)},
    )


@dataclass
class AlignmentHead:
    """REPA term: project a generation-tower layer onto encoder features."""

    projection: nn.Module
    layer: int
    weight: float


def optimizer_tensors(optimizer: torch.optim.Optimizer) -> Tensors:
    """Flatten AdamW moments and step counts into named tensors."""
    out: Tensors = {}
    for idx, state in optimizer.state_dict()["state"].items():
        for key, value in state.items():
            out[f"{idx}.{key}"] = torch.as_tensor(value, dtype=torch.float32) if not torch.is_tensor(value) else value
    return out


def load_optimizer_tensors(optimizer: torch.optim.Optimizer, tensors: Tensors) -> None:
    state: Dict[int, Dict[str, torch.Tensor]] = {}
    for name, value in tensors.items():
        idx, key = name.split(".", 1)
        state.setdefault(int(idx), {})[key] = value.clone()
    optimizer.load_state_dict({"state": state, "param_groups": optimizer.state_dict()["param_groups"]})


class GeneratorTrainer:
    """
    Owns the optimizer, EMA and step counter of one generator run.

    Every step ``s`` draws its minibatch, times, noise and prompt drops from
    ``(seed, s)``, so ``state_dict`` / ``load_state_dict`` resume exactly.
    """

    def __init__(
        self,
        generator: MoTGenerator,
        corpus: LatentCorpus,
        cfg: GeneratorConfig,
        seed: int = 0,
        device: str = "cpu",
        align: Optional[AlignmentHead] = None,
    ) -> None:
        self.generator = generator.to(device)
        self.corpus = corpus
        self.cfg = cfg
        self.seed = seed
        self.device = device
        self.align = align
        if align is not None:
            if corpus.align_targets is None:
                raise DependencyError("alignment needs encoder feature targets in the corpus")
            if not 0 <= align.layer < generator.depth:
                raise ValidationError("align_layer", f"index {align.layer} out of range 0..{generator.depth - 1}")
            align.projection.to(device)
        params = [p for p in generator.parameters() if p.requires_grad]
        if align is not None:
            params += list(align.projection.parameters())
        self.optimizer = torch.optim.AdamW(
            params, lr=cfg.learning_rate, betas=(cfg.beta1, cfg.beta2), weight_decay=cfg.weight_decay
        )
        self.ema = init_ema(trainable_state(generator), cfg.ema_decay, activation_step=int(cfg.ema_start_fraction * cfg.steps))
        self.step = 0
        self.history: List[Dict[str, float]] = []

    def compute_loss(self, step: int) -> Tuple[torch.Tensor, Dict[str, float]]:
        idx = batch_indices(len(self.corpus), self.cfg.batch_size, self.seed, step)
        tokens = self.corpus.tokens[idx].to(self.device)
        latents = self.corpus.latents[idx].to(self.device)
        draw = FlowDraw.sample(latents, self.cfg.prompt_drop_prob, torch_generator(self.seed, step, 5))
        use_align = self.align is not None and self.align.weight > 0
        loss, hidden = flow_loss_terms(self.generator, tokens, latents, draw, self.align.layer if use_align else None)
        terms = {"flow": float(loss)}
        total = loss
        if use_align:
            target = self.corpus.align_targets[idx].to(self.device)
            align_loss = repa_align_loss(self.align.projection(hidden), target)
            total = loss + self.align.weight * align_loss
            terms["align"] = float(align_loss)
        terms["total"] = float(total)
        return total, terms

    def train_step(self) -> Dict[str, float]:
        self.generator.train()
        total, terms = self.compute_loss(self.step)
        if not torch.isfinite(total):
            raise TrainingError("generator flow loss is not finite", step=self.step)
        self.optimizer.zero_grad(set_to_none=True)
        total.backward()
        self.optimizer.step()
        self.ema = ema_step(self.ema, trainable_state(self.generator), self.step)
        terms["step"] = self.step
        self.history.append(terms)
        if self.step % config.LOG_EVERY == 0:
            logger.info("generator[%s] step %d loss %.4f", self.corpus.target, self.step, terms["total"])
        self.step += 1
        return terms

    def train(
        self,
        steps: Optional[int] = None,
        callback: Optional[Callable[["GeneratorTrainer"], None]] = None,
        every: int = 0,
    ) -> "GeneratorTrainer":
        """Run until ``steps`` (default ``cfg.steps``) total steps are done."""
        steps = self.cfg.steps if steps is None else steps
        for _ in tqdm(range(self.step, steps), desc=f"train generator [{self.corpus.target}]", leave=False):
            self.train_step()
            if callback is not None and every and self.step % every == 0:
                callback(self)
        return self

    def ema_generator(self) -> MoTGenerator:
        return with_shadow(self.generator, self.ema)

    def state_dict(self) -> Tensors:
        tensors = with_prefix(self.generator.state_dict(), "model")
        tensors.update(with_prefix(self.ema.shadow, "ema"))
        tensors.update(with_prefix(optimizer_tensors(self.optimizer), "optim"))
        if self.align is not None:
            tensors.update(with_prefix(self.align.projection.state_dict(), "align"))
        return tensors

    def load_state_dict(self, tensors: Tensors, step: int) -> None:
        self.generator.load_state_dict(split_prefix(tensors, "model"))
        self.ema = EmaState(
            {k: v.to(self.device) for k, v in split_prefix(tensors, "ema").items()},
            self.ema.decay,
            self.ema.activation_step,
        )
        load_optimizer_tensors(self.optimizer, split_prefix(tensors, "optim"))
        if self.align is not None:
            self.align.projection.load_state_dict(split_prefix(tensors, "align"))
        self.step = step


@dataclass
class GeneratorResult:
    trainer: GeneratorTrainer
    text_hash: str

    @property
    def generator(self) -> MoTGenerator:
        return self.trainer.generator

    @property
    def ema(self) -> EmaState:
        return self.trainer.ema


def build_generator(text_tower: TextTower, corpus: LatentCorpus, seed: int = 0) -> MoTGenerator:
    init_seed(seed, 401)
    n_tokens, channels = corpus.latent_shape
    return MoTGenerator(text_tower, latent_dim=channels, n_latent_tokens=n_tokens)


def train_generator(
    corpus: LatentCorpus,
    text_tower: TextTower,
    cfg: GeneratorConfig,
    expected_upstream: Dict[str, str],
    seed: int = 0,
    device: str = "cpu",
    align: Optional[AlignmentHead] = None,
    callback: Optional[Callable[[GeneratorTrainer], None]] = None,
    every: int = 0,
    steps: Optional[int] = None,
    resume: Optional[Tuple[Tensors, int]] = None,
) -> GeneratorResult:
    """
    Train a generator on ``corpus``, from scratch or from ``resume`` (the
    trainer tensors and step count of an earlier checkpoint).

    Raises
    ------
    StageMismatchError
        If the corpus was built from upstream artifacts other than
        ``expected_upstream``, or the frozen text tower changed.
    """
    for name, expected in expected_upstream.items():
        if name not in corpus.upstream:
            raise StageMismatchError(f"corpus records no {name} hash")
        require_hash(name, expected, corpus.upstream[name])
    generator = build_generator(text_tower, corpus, seed)
    text_hash = generator.text_hash()
    trainer = GeneratorTrainer(generator, corpus, cfg, seed=seed, device=device, align=align)
    if resume is not None:
        trainer.load_state_dict(*resume)
        logger.info("resuming generator[%s] at step %d", corpus.target, trainer.step)
    trainer.train(steps=steps, callback=callback, every=every)
    if generator.text_hash() != text_hash:
        raise StageMismatchError("frozen text tower changed during generative training")
    return GeneratorResult(trainer=trainer, text_hash=text_hash)


# -----------------------------
# CHECKPOINTS
# -----------------------------


def save_generator(stem: Path | str, trainer: GeneratorTrainer, cfg: GeneratorConfig, extra: Optional[Dict] = None) -> str:
    """Weights, EMA shadow, optimizer state, latent stats and upstream hashes."""
    tensors = trainer.state_dict()
    tensors.update(trainer.corpus.stats.to_tensors())
    return save_checkpoint(
        stem,
        tensors,
        config=cfg,
        metadata={
            "target": trainer.corpus.target,
            "step": trainer.step,
            "seed": trainer.seed,
            "latent_shape": list(trainer.corpus.latent_shape),
            "upstream": trainer.corpus.upstream,
            "text_hash": trainer.generator.text_hash(),
            "ema_activation_step": trainer.ema.activation_step,
            "align": None if trainer.align is None else {"layer": trainer.align.layer, "weight": trainer.align.weight},
            "history": trainer.history,
            **(extra or {}),
        },
    )


@dataclass
class LoadedGenerator:
    generator: MoTGenerator
    ema_generator: MoTGenerator
    stats: LatentStats
    manifest: Dict

    def sampling_model(self, use_ema: bool) -> MoTGenerator:
        return self.ema_generator if use_ema else self.generator


def load_generator(
    stem: Path | str,
    text_tower: TextTower,
    expected_upstream: Dict[str, str],
    device: str = "cpu",
) -> LoadedGenerator:
    """
    Rebuild raw and EMA generators from a checkpoint.

    Raises
    ------
    StageMismatchError
        If the recorded text-tower or upstream hashes differ from the ones given.
    """
    tensors, manifest = load_checkpoint(stem)
    meta = manifest["metadata"]
    require_hash("text_tower", meta["text_hash"], module_hash(text_tower))
    for name, expected in expected_upstream.items():
        require_hash(name, meta["upstream"].get(name, ""), expected)
    n_tokens, channels = meta["latent_shape"]
    generator = MoTGenerator(text_tower, latent_dim=channels, n_latent_tokens=n_tokens)
    generator.load_state_dict(split_prefix(tensors, "model"))
    ema = EmaState(split_prefix(tensors, "ema"), GeneratorConfig(**manifest["config"]).ema_decay, meta["ema_activation_step"])
    generator = freeze_module(generator.to(device))
    ema_generator = freeze_module(with_shadow(generator, EmaState({k: v.to(device) for k, v in ema.shadow.items()}, ema.decay)))
    return LoadedGenerator(generator, ema_generator, LatentStats.from_tensors(tensors), manifest)


# -----------------------------
# TWO-STAGE COMPOSITION
# -----------------------------


class LatentCodec(Protocol):
    """Maps raw (destandardized) latents to images."""

    name: str

    def decode(self, latents: torch.Tensor, seed: int) -> torch.Tensor: ...


class VugenCodec:
    """Reduced understanding latents decoded by the pixel (or latent) diffusion decoder."""

    name = "vugen"

    def __init__(self, model: ReconstructionModel, steps: int = config.DECODE_STEPS, vae: Optional[nn.Module] = None) -> None:
        self.model = model
        self.steps = steps
        self.vae = vae

    def decode(self, latents: torch.Tensor, seed: int) -> torch.Tensor:
        return decode(self.model, latents, self.steps, seed, vae=self.vae)


@dataclass
class GeneratedBatch:
    prompts: List[str]
    latents: torch.Tensor
    images: torch.Tensor


class GenerationSystem:
    """A generator plus the codec turning its samples into images."""

    def __init__(self, name: str, loaded: LoadedGenerator, codec: LatentCodec) -> None:
        self.name = name
        self.loaded = loaded
        self.codec = codec

    def generate(self, prompts: Sequence[str], sampler: SamplerConfig, batch_size: int = 256) -> GeneratedBatch:
        """Sample latents then decode; batches are seeded from ``sampler.seed``."""
        model = self.loaded.sampling_model(sampler.use_ema)
        latents, images = [], []
        prompts = list(prompts)
        for i in range(0, len(prompts), batch_size):
            chunk = prompts[i:i + batch_size]
            sub = replace(sampler, seed=sampler.seed + i)
            z = sample_latents(model, sub, self.loaded.stats, prompts=chunk)
            latents.append(z.cpu())
            images.append(self.codec.decode(z, seed=sampler.seed + i).cpu())
        return GeneratedBatch(prompts=prompts, latents=torch.cat(latents), images=torch.cat(images))


def generate_image(system: GenerationSystem, prompt: str, sampler: SamplerConfig) -> Tuple[np.ndarray, torch.Tensor]:
    """One image ``(H, W, 3)`` in [-1, 1] for ``prompt`` plus its raw latent."""
    batch = system.generate([prompt], replace(sampler, n_images=1, prompt=prompt))
    return batch.images[0].permute(1, 2, 0).numpy(), batch.latents[0]
