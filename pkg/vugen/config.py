"""
vugen/config.py

Central configuration module for the VUGEN desk-scale pipeline.

This file stores:
- Image / patch geometry and the toy caption grammar
- Network shapes for the encoder, reducer, decoders and generator
- Training budgets, optimizer and EMA settings
- Loss weights, sampler and evaluation defaults
- Dataclass schemas that turn these defaults into a strict run config

All other modules should import from here instead of hard-coding values.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, is_dataclass
from typing import Any, List

from omegaconf import OmegaConf
from omegaconf.errors import OmegaConfBaseException

from vugen.errors import ConfigError


# -----------------------------
# IMAGE GEOMETRY
# -----------------------------

#: Side length of every image (pixels)
IMAGE_SIZE: int = 32

#: Side length of one encoder patch (pixels)
PATCH_SIZE: int = 4

#: Patches per side; the latent token grid is GRID_SIZE x GRID_SIZE
GRID_SIZE: int = IMAGE_SIZE // PATCH_SIZE

#: Number of latent tokens per image
N_PATCHES: int = GRID_SIZE * GRID_SIZE


# -----------------------------
# SCENE GRAMMAR
# -----------------------------

MAX_OBJECTS: int = 3

SHAPES = ("circle", "square", "triangle")
COLORS = ("red", "green", "blue", "yellow")
POSITIONS = ("left", "right", "top", "bottom", "center")
BACKGROUNDS = ("white", "gray", "black")

# RGB values (0-255) used by the rasterizer.
COLOR_RGB = {
    "red": (220, 40, 40),
    "green": (40, 180, 60),
    "blue": (40, 70, 220),
    "yellow": (235, 215, 40),
}

BACKGROUND_RGB = {
    "white": (245, 245, 245),
    "gray": (128, 128, 128),
    "black": (15, 15, 15),
}

#: Slot centers (x, y) in pixels for each discrete position
POSITION_CENTERS = {
    "left": (8, 16),
    "right": (24, 16),
    "top": (16, 8),
    "bottom": (16, 24),
    "center": (16, 16),
}

#: Object half-extents drawn per scene (pixels); jittered per object
OBJECT_SIZES = (3, 4)

#: Minimum fraction of a patch an object must cover to label the patch with its color
PATCH_LABEL_MIN_COVERAGE: float = 0.25

#: Fixed token length of every prompt (BOS included)
TEXT_LEN: int = 16


# -----------------------------
# ENCODER (f_und)
# -----------------------------

ENCODER_EMBED_DIM: int = 64
ENCODER_DEPTH: int = 4
ENCODER_HEADS: int = 4
MLP_RATIO: int = 4

#: Encoder layers compared by the perceptual loss
PERCEPTUAL_LAYERS = (1, 3)


# -----------------------------
# DIMENSION REDUCER (g)
# -----------------------------

#: Default reduction ratio r (D -> D / r)
REDUCTION_RATIO: int = 16

#: Ratios allowed in the ablation grid
RATIO_GRID = (1, 2, 4, 8, 16, 32)

#: Floor applied to per-channel std when standardizing latents
STD_EPS: float = 1e-6


# -----------------------------
# PIXEL / LATENT DECODERS
# -----------------------------

DECODER_BASE_WIDTH: int = 32
DECODER_STAGES: int = 2
DECODER_TRANSFORMER_BLOCKS: int = 2
DECODER_HEADS: int = 4

LDM_WIDTH: int = 128
LDM_DEPTH: int = 4

#: Euler steps used when decoding latents to pixels
DECODE_STEPS: int = 16

# Decoder loss weights (flow weight is fixed at 1).
LAMBDA_FLOW: float = 1.0
LAMBDA_PERCEPTUAL: float = 0.1
LAMBDA_REPA: float = 0.25


# -----------------------------
# GENERATOR (two-tower MoT)
# -----------------------------

GENERATOR_WIDTH: int = 128
GENERATOR_DEPTH: int = 6
GENERATOR_HEADS: int = 4

#: Probability of replacing the prompt with NULL during training (for CFG)
PROMPT_DROP_PROB: float = 0.1

#: Euler steps used when sampling latents
SAMPLE_STEPS: int = 32

#: Default classifier-free guidance scale
CFG_SCALE: float = 1.8


# -----------------------------
# BASELINES
# -----------------------------

VAE_LATENT_CHANNELS: int = 4
VAE_WIDTH: int = 64
VAE_BETA: float = 1e-3

#: Generation-tower layer whose hidden states are aligned in the REPA baseline
REPA_ALIGN_LAYER: int = GENERATOR_DEPTH // 2
REPA_ALIGN_WEIGHT: float = 0.5


# -----------------------------
# OPTIMIZATION
# -----------------------------

BATCH_SIZE: int = 64
LEARNING_RATE: float = 3e-4
ADAM_BETAS = (0.9, 0.95)
WEIGHT_DECAY: float = 0.1

EMA_DECAY: float = 0.999

#: EMA tracks raw weights until this fraction of the step budget has passed
EMA_START_FRACTION: float = 0.2

ENCODER_STEPS: int = 2000
SCORER_STEPS: int = 1500
TEXT_TOWER_STEPS: int = 1000
DECODER_STEPS: int = 5000
VAE_STEPS: int = 3000
GENERATOR_STEPS: int = 10000

LOG_EVERY: int = 100
CHECKPOINT_EVERY: int = 2000


# -----------------------------
# DATA AND EVALUATION
# -----------------------------

N_TRAIN: int = 8192
N_VAL: int = 2048

#: Neighborhood size for density / coverage / precision / recall
METRIC_K: int = 5

EVAL_SAMPLES: int = 2048

#: Sample count used at intermediate training-curve checkpoints
CURVE_EVAL_SAMPLES: int = 1024

#: Images used for validation reconstruction MSE during decoder training
RECON_EVAL_IMAGES: int = 256

CFG_SWEEP_SCALES = (0.0, 1.0, 2.0, 4.0, 8.0)

#: Fraction of the full budgets used per cell of the ratio ablation
ABLATION_BUDGET_FRACTION: float = 0.25


# -----------------------------
# PLOTTING
# -----------------------------
# Hex colors shared by sweep plots and the results browser.

SYSTEM_COLORS = {
    "vugen": "#1E88E5",      # Blue
    "decoupled": "#E53935",  # Red
    "repa": "#43A047",       # Green
    "pca": "#8E24AA",        # Purple
    "mlp": "#1E88E5",
    "pdd": "#1E88E5",
    "ldm": "#FB8C00",        # Orange
}

DEFAULT_LINE_WIDTH: float = 2.0

#: Columns of the sample grid written by the sample stage
GRID_COLUMNS: int = 8


# -----------------------------
# ENVIRONMENT
# -----------------------------

DEVICE_ENV_VAR: str = "VUGEN_DEVICE"
LOG_LEVEL_ENV_VAR: str = "VUGEN_LOG_LEVEL"

STAGES = (
    "build-data",
    "pretrain-encoder",
    "train-decoder",
    "train-generator",
    "train-baseline",
    "sample",
    "eval",
    "sweep",
)

SWEEP_KINDS = ("cfg", "ratio", "reducer", "systems", "decoders")


def resolve_device(requested: str = "") -> str:
    """Return the compute device: explicit request, then env var, then cpu."""
    return requested or os.environ.get(DEVICE_ENV_VAR, "cpu")


# -----------------------------
# RUN CONFIG SCHEMA
# -----------------------------


@dataclass
class SeedConfig:
    data: int = 0
    init: int = 1
    train_order: int = 2
    sampler: int = 3


@dataclass
class DataConfig:
    n_train: int = N_TRAIN
    n_val: int = N_VAL


@dataclass
class EncoderConfig:
    patch_size: int = PATCH_SIZE
    embed_dim: int = ENCODER_EMBED_DIM
    depth: int = ENCODER_DEPTH
    heads: int = ENCODER_HEADS
    steps: int = ENCODER_STEPS
    scorer_steps: int = SCORER_STEPS
    batch_size: int = BATCH_SIZE
    learning_rate: float = 1e-3


@dataclass
class ReducerConfig:
    variant: str = "mlp"
    ratio: int = REDUCTION_RATIO


@dataclass
class DecoderConfig:
    kind: str = "pdd"
    base_width: int = DECODER_BASE_WIDTH
    stages: int = DECODER_STAGES
    transformer_blocks: int = DECODER_TRANSFORMER_BLOCKS
    heads: int = DECODER_HEADS
    ldm_width: int = LDM_WIDTH
    ldm_depth: int = LDM_DEPTH
    steps: int = DECODER_STEPS
    batch_size: int = BATCH_SIZE
    learning_rate: float = LEARNING_RATE
    lambda_perceptual: float = LAMBDA_PERCEPTUAL
    lambda_repa: float = LAMBDA_REPA
    decode_steps: int = DECODE_STEPS
    eval_every: int = 500
    vae_steps: int = VAE_STEPS
    vae_beta: float = VAE_BETA


@dataclass
class GeneratorConfig:
    width: int = GENERATOR_WIDTH
    depth: int = GENERATOR_DEPTH
    heads: int = GENERATOR_HEADS
    text_steps: int = TEXT_TOWER_STEPS
    steps: int = GENERATOR_STEPS
    batch_size: int = BATCH_SIZE
    learning_rate: float = LEARNING_RATE
    beta1: float = ADAM_BETAS[0]
    beta2: float = ADAM_BETAS[1]
    weight_decay: float = WEIGHT_DECAY
    prompt_drop_prob: float = PROMPT_DROP_PROB
    ema_decay: float = EMA_DECAY
    ema_start_fraction: float = EMA_START_FRACTION
    checkpoint_every: int = CHECKPOINT_EVERY


@dataclass
class BaselineConfig:
    variant: str = "decoupled"
    align_layer: int = REPA_ALIGN_LAYER
    align_weight: float = REPA_ALIGN_WEIGHT


@dataclass
class SamplerConfig:
    steps: int = SAMPLE_STEPS
    cfg_scale: float = CFG_SCALE
    seed: int = 0
    prompt: str = ""
    use_ema: bool = True
    n_images: int = 16


@dataclass
class EvalConfig:
    system: str = "vugen"
    n_samples: int = EVAL_SAMPLES
    curve_samples: int = CURVE_EVAL_SAMPLES
    k: int = METRIC_K


@dataclass
class SweepConfig:
    kind: str = "cfg"
    scales: List[float] = field(default_factory=lambda: list(CFG_SWEEP_SCALES))
    ratios: List[int] = field(default_factory=lambda: [1, 2, 8, 16, 32])
    budget_fraction: float = ABLATION_BUDGET_FRACTION
    curve_every: int = CHECKPOINT_EVERY


@dataclass
class RunConfig:
    stage: str = "eval"
    out_dir: str = "runs/default"
    device: str = ""
    seeds: SeedConfig = field(default_factory=SeedConfig)
    data: DataConfig = field(default_factory=DataConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    reducer: ReducerConfig = field(default_factory=ReducerConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)


def validate_run_config(cfg: RunConfig) -> RunConfig:
    """Check the enum-like and range fields the schema types cannot express."""
    if cfg.stage not in STAGES:
        raise ConfigError(f"stage: unknown stage {cfg.stage!r}; expected one of {STAGES}")
    if cfg.reducer.variant not in ("pca", "mlp"):
        raise ConfigError(f"reducer.variant: expected 'pca' or 'mlp', got {cfg.reducer.variant!r}")
    if cfg.decoder.kind not in ("pdd", "ldm"):
        raise ConfigError(f"decoder.kind: expected 'pdd' or 'ldm', got {cfg.decoder.kind!r}")
    if cfg.baseline.variant not in ("decoupled", "repa"):
        raise ConfigError(f"baseline.variant: expected 'decoupled' or 'repa', got {cfg.baseline.variant!r}")
    if cfg.eval.system not in ("vugen", "decoupled", "repa"):
        raise ConfigError(f"eval.system: unknown system {cfg.eval.system!r}")
    if cfg.sweep.kind not in SWEEP_KINDS:
        raise ConfigError(f"sweep.kind: expected one of {SWEEP_KINDS}, got {cfg.sweep.kind!r}")
    if cfg.sampler.steps < 1:
        raise ConfigError("sampler.steps: must be >= 1")
    if cfg.sampler.cfg_scale < 0:
        raise ConfigError("sampler.cfg_scale: must be >= 0")
    if cfg.reducer.ratio < 1 or cfg.encoder.embed_dim % cfg.reducer.ratio != 0:
        raise ConfigError(
            f"reducer.ratio: {cfg.reducer.ratio} does not divide encoder.embed_dim {cfg.encoder.embed_dim}"
        )
    return cfg


def load_run_config(path: str, overrides: List[str] | None = None) -> RunConfig:
    """
    Load a YAML run config onto the strict ``RunConfig`` schema.

    Parameters
    ----------
    path : str
        YAML file. Missing keys take the defaults above.
    overrides : list of str, optional
        Dotlist overrides such as ``["out_dir=runs/x"]``.

    Returns
    -------
    RunConfig
        Fully resolved config.

    Raises
    ------
    ConfigError
        For unknown keys (the dotted key path is named), type mismatches, or
        an unreadable file.
    """
    schema = OmegaConf.structured(RunConfig)
    try:
        loaded = OmegaConf.load(path)
        merged = OmegaConf.merge(schema, loaded, OmegaConf.from_dotlist(overrides or []))
    except OmegaConfBaseException as exc:
        key = getattr(exc, "full_key", None) or getattr(exc, "key", None)
        raise ConfigError(f"invalid config field {key!r} in {path}: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    cfg = OmegaConf.to_object(merged)
    return validate_run_config(cfg)


def config_to_dict(obj: Any) -> Any:
    """Plain-python view of a dataclass config (for manifests and hashing)."""
    if is_dataclass(obj):
        return asdict(obj)
    return obj


def config_hash(obj: Any) -> str:
    """sha256 of the canonical JSON form of a config subtree."""
    payload = json.dumps(config_to_dict(obj), sort_keys=True, default=str)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def shared_config_hash(cfg: RunConfig) -> str:
    """
    Hash of every field the three compared systems must share: tower shapes,
    optimizer, step budget, sampler and evaluation settings.
    """
    g = cfg.generator
    shared = {
        "width": g.width,
        "depth": g.depth,
        "heads": g.heads,
        "steps": g.steps,
        "batch_size": g.batch_size,
        "learning_rate": g.learning_rate,
        "betas": [g.beta1, g.beta2],
        "weight_decay": g.weight_decay,
        "prompt_drop_prob": g.prompt_drop_prob,
        "ema": [g.ema_decay, g.ema_start_fraction],
        "sampler": config_to_dict(cfg.sampler),
        "eval": config_to_dict(cfg.eval) | {"system": None},
        "seeds": config_to_dict(cfg.seeds),
        "data": config_to_dict(cfg.data),
    }
    return config_hash(shared)
