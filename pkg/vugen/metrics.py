"""
vugen/metrics.py

Evaluation metrics, all computed in the frozen understanding encoder's
pooled feature space:

- eFID: Fréchet distance between real and generated feature Gaussians
- density / coverage (and precision / recall) from k-NN balls
- prompt alignment: cosine between a contrastively trained image branch and
  caption branch, standing in for CLIP score

Density and coverage are reported x100; precision and recall as fractions.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from scipy import linalg
from scipy.spatial.distance import cdist
from torch import nn
from tqdm import tqdm

from vugen import config
from vugen.checkpoints import load_checkpoint, require_hash, save_checkpoint
from vugen.config import EvalConfig, SamplerConfig
from vugen.encoder import UnderstandingEncoder, encode_dataset
from vugen.errors import ArtifactIOError, TrainingError, ValidationError
from vugen.layers import TransformerBlock, freeze_module
from vugen.seeding import batch_indices, init_seed
from vugen.toydata import PAD_ID, VOCAB_SIZE, ShapesDataset, tokenize_batch

logger = logging.getLogger(__name__)


# -----------------------------
# FEATURES
# -----------------------------


@dataclass
class FeatureSet:
    """Pooled encoder embeddings ``(n, d)`` of one image set."""

    features: np.ndarray
    source: str
    encoder_hash: str = ""

    def __post_init__(self) -> None:
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or not len(self.features):
            raise ValidationError("features", f"expected a nonempty (n, d) matrix, got shape {self.features.shape}")
        if not np.isfinite(self.features).all():
            raise ValidationError("features", f"{self.source} features contain non-finite values")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def gaussian(self) -> Tuple[np.ndarray, np.ndarray]:
        """Sample mean and covariance; needs ``n >= d + 1``."""
        if self.n < self.dim + 1:
            raise ValidationError("n_samples", f"{self.source}: need at least d + 1 = {self.dim + 1} samples, got {self.n}")
        return self.features.mean(axis=0), np.cov(self.features, rowvar=False)


def extract_features(encoder: UnderstandingEncoder, images: torch.Tensor, source: str) -> FeatureSet:
    latents = encode_dataset(encoder, images)
    return FeatureSet(latents.mean(dim=1).double().numpy(), source=source, encoder_hash=encoder.param_hash or "")


def _as_array(x: FeatureSet | np.ndarray) -> np.ndarray:
    return x.features if isinstance(x, FeatureSet) else np.asarray(x, dtype=np.float64)


# -----------------------------
# FRECHET DISTANCE
# -----------------------------


def _symmetric_sqrt(a: np.ndarray) -> np.ndarray:
    eigvals, eigvecs = linalg.eigh(a)
    return (eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))) @ eigvecs.T


def frechet_distance(mu1: np.ndarray, cov1: np.ndarray, mu2: np.ndarray, cov2: np.ndarray, tol: float = 1e-8) -> float:
    """
    ``|mu1 - mu2|^2 + tr(cov1 + cov2 - 2 (cov1 cov2)^{1/2})``.

    The trace of the product root is computed as the trace of
    ``(cov1^{1/2} cov2 cov1^{1/2})^{1/2}``, which only needs symmetric
    eigendecompositions; negative eigenvalues are clipped at 0.

    Raises
    ------
    ValidationError
        If either covariance is asymmetric beyond ``tol``.
    """
    mu1, mu2 = np.atleast_1d(np.asarray(mu1, dtype=np.float64)), np.atleast_1d(np.asarray(mu2, dtype=np.float64))
    cov1, cov2 = np.atleast_2d(np.asarray(cov1, dtype=np.float64)), np.atleast_2d(np.asarray(cov2, dtype=np.float64))
    for name, cov in (("cov1", cov1), ("cov2", cov2)):
        if cov.shape != (mu1.shape[0], mu1.shape[0]):
            raise ValidationError(name, f"shape {cov.shape} does not match mean dim {mu1.shape[0]}")
        if np.abs(cov - cov.T).max() > tol:
            raise ValidationError(name, "covariance is not symmetric")
    root1 = _symmetric_sqrt(cov1)
    middle = root1 @ cov2 @ root1
    middle = 0.5 * (middle + middle.T)
    tr_covmean = float(np.sqrt(np.clip(linalg.eigvalsh(middle), 0.0, None)).sum())
    diff = mu1 - mu2
    value = float(diff @ diff + np.trace(cov1) + np.trace(cov2) - 2.0 * tr_covmean)
    return max(value, 0.0)


def efid(real: FeatureSet, fake: FeatureSet) -> float:
    """Fréchet distance between two feature sets (encoder-space FID)."""
    if real.dim != fake.dim:
        raise ValidationError("features", f"dims differ: {real.dim} vs {fake.dim}")
    return frechet_distance(*real.gaussian(), *fake.gaussian())


# -----------------------------
# K-NN MANIFOLD METRICS
# -----------------------------


def kth_neighbor_distances(x: np.ndarray, k: int) -> np.ndarray:
    """Distance from each row to its k-th nearest other row (self excluded)."""
    if not 1 <= k < len(x):
        raise ValidationError("k", f"need 1 <= k < n = {len(x)}, got {k}")
    dist = cdist(x, x)
    np.fill_diagonal(dist, np.inf)
    return np.sort(dist, axis=1)[:, k - 1]


def density_coverage(real: FeatureSet | np.ndarray, fake: FeatureSet | np.ndarray, k: int = config.METRIC_K) -> Tuple[float, float]:
    """
    Density and coverage, both x100. A fake point counts for real point i
    when its distance is ``<=`` the k-NN radius of i.
    """
    r, f = _as_array(real), _as_array(fake)
    if f.ndim != 2 or not len(f):
        raise ValidationError("fake", f"need a non-empty (n, d) array, got shape {f.shape}")
    if r.shape[1] != f.shape[1]:
        raise ValidationError("features", f"dims differ: {r.shape[1]} vs {f.shape[1]}")
    radii = kth_neighbor_distances(r, k)
    inside = cdist(r, f) <= radii[:, None]
    density = inside.sum() / (k * f.shape[0])
    coverage = inside.any(axis=1).mean()
    return 100.0 * float(density), 100.0 * float(coverage)


def precision_recall(real: FeatureSet | np.ndarray, fake: FeatureSet | np.ndarray, k: int = config.METRIC_K) -> Tuple[float, float]:
    """
    Improved precision (fakes inside the real manifold) and recall (reals
    inside the fake manifold), as fractions.
    """
    r, f = _as_array(real), _as_array(fake)
    dist = cdist(r, f)
    precision = (dist <= kth_neighbor_distances(r, k)[:, None]).any(axis=0).mean()
    recall = (dist <= kth_neighbor_distances(f, k)[None, :]).any(axis=1).mean()
    return float(precision), float(recall)


# -----------------------------
# PROMPT ALIGNMENT
# -----------------------------


class AlignmentScorer(nn.Module):
    """
    Two-branch contrastive scorer: per-patch MLP over frozen encoder latents
    (mean pooled) for images, one transformer block over caption tokens
    (mean pooled over non-pad positions) for text.
    """

    def __init__(self, latent_dim: int = config.ENCODER_EMBED_DIM, width: int = 64, text_len: int = config.TEXT_LEN) -> None:
        super().__init__()
        self.latent_dim = latent_dim
        self.width = width
        self.image_mlp = nn.Sequential(nn.Linear(latent_dim, width), nn.SiLU(), nn.Linear(width, width))
        self.image_out = nn.Linear(width, width)
        self.token_embed = nn.Embedding(VOCAB_SIZE, width)
        self.text_pos = nn.Parameter(torch.randn(1, text_len, width) * 0.02)
        self.text_block = TransformerBlock(width, heads=4)
        self.text_out = nn.Linear(width, width)
        self.logit_scale = nn.Parameter(torch.tensor(math.log(1 / 0.07)))

    def embed_images(self, latents: torch.Tensor) -> torch.Tensor:
        return F.normalize(self.image_out(self.image_mlp(latents).mean(dim=1)), dim=-1)

    def embed_text(self, tokens: torch.Tensor) -> torch.Tensor:
        h = self.text_block(self.token_embed(tokens) + self.text_pos[:, : tokens.shape[1]])
        keep = (tokens != PAD_ID).unsqueeze(-1).to(h)
        pooled = (h * keep).sum(dim=1) / keep.sum(dim=1).clamp_min(1.0)
        return F.normalize(self.text_out(pooled), dim=-1)

    def pair_scores(self, latents: torch.Tensor, tokens: torch.Tensor) -> torch.Tensor:
        """Cosine similarity per (image, caption) pair, in [-1, 1]."""
        return (self.embed_images(latents) * self.embed_text(tokens)).sum(dim=-1).clamp(-1.0, 1.0)


@dataclass
class ScorerResult:
    scorer: AlignmentScorer
    losses: List[float] = field(default_factory=list)
    matched_val_score: float = float("nan")
    shuffled_val_score: float = float("nan")


def train_alignment_scorer(
    train: ShapesDataset,
    val: ShapesDataset,
    encoder: UnderstandingEncoder,
    steps: int = config.SCORER_STEPS,
    batch_size: int = config.BATCH_SIZE,
    learning_rate: float = 1e-3,
    seed: int = 0,
    device: str = "cpu",
) -> ScorerResult:
    """Symmetric InfoNCE on (image, caption) pairs, then freeze."""
    encoder.require_frozen()
    init_seed(seed, 701)
    scorer = AlignmentScorer(latent_dim=encoder.embed_dim).to(device)
    latents = encode_dataset(encoder, train.images())
    tokens = train.tokens
    optimizer = torch.optim.AdamW(scorer.parameters(), lr=learning_rate, weight_decay=0.01)
    losses: List[float] = []
    scorer.train()
    for step in tqdm(range(steps), desc="train alignment scorer", leave=False):
        idx = batch_indices(len(train), batch_size, seed, step)
        img = scorer.embed_images(latents[idx].to(device))
        txt = scorer.embed_text(tokens[idx].to(device))
        logits = scorer.logit_scale.exp().clamp(max=100.0) * img @ txt.T
        labels = torch.arange(len(idx), device=device)
        loss = 0.5 * (F.cross_entropy(logits, labels) + F.cross_entropy(logits.T, labels))
        if not torch.isfinite(loss):
            raise TrainingError("alignment scorer loss is not finite", step=step)
        optimizer.zero_grad(set_to_none=True)
        loss.backward()
        optimizer.step()
        losses.append(float(loss))
    freeze_module(scorer)

    val_images = val.images()
    matched = prompt_alignment_score(scorer, encoder, val_images, val.captions)
    shuffled = np.random.default_rng(seed).permutation(len(val))
    mismatched = prompt_alignment_score(scorer, encoder, val_images, [val.captions[i] for i in shuffled])
    logger.info("alignment scorer: matched %.3f vs shuffled %.3f on val", matched, mismatched)
    return ScorerResult(scorer=scorer, losses=losses, matched_val_score=matched, shuffled_val_score=mismatched)


@torch.no_grad()
def prompt_alignment_score(
    scorer: AlignmentScorer,
    encoder: UnderstandingEncoder,
    images: torch.Tensor,
    prompts: Sequence[str],
    batch_size: int = 256,
) -> float:
    """Mean cosine between image and caption embeddings over pairs, in [-1, 1]."""
    if len(images) != len(prompts):
        raise ValidationError("prompts", f"{len(prompts)} prompts for {len(images)} images")
    device = next(scorer.parameters()).device
    latents = encode_dataset(encoder, images)
    tokens = tokenize_batch(list(prompts))
    scores = [
        scorer.pair_scores(latents[i:i + batch_size].to(device), tokens[i:i + batch_size].to(device)).cpu()
        for i in range(0, len(prompts), batch_size)
    ]
    return float(torch.cat(scores).double().mean())


def save_scorer(stem: Path | str, result: ScorerResult, encoder_hash: str) -> str:
    return save_checkpoint(
        stem,
        result.scorer.state_dict(),
        metadata={
            "encoder_hash": encoder_hash,
            "latent_dim": result.scorer.latent_dim,
            "width": result.scorer.width,
            "matched_val_score": result.matched_val_score,
            "shuffled_val_score": result.shuffled_val_score,
        },
    )


def load_scorer(stem: Path | str, encoder: UnderstandingEncoder, device: str = "cpu") -> AlignmentScorer:
    tensors, manifest = load_checkpoint(stem)
    meta = manifest["metadata"]
    require_hash("encoder", meta["encoder_hash"], encoder.param_hash)
    scorer = AlignmentScorer(latent_dim=meta["latent_dim"], width=meta["width"])
    scorer.load_state_dict(tensors)
    return freeze_module(scorer).to(device)


# -----------------------------
# REPORTS
# -----------------------------


@dataclass
class MetricReport:
    system: str
    efid: float
    density: float
    coverage: float
    precision: float
    recall: float
    alignment: float
    k: int
    n_real: int
    n_fake: int
    config_hash: str
    encoder_hash: str = ""
    step: Optional[int] = None
    extra: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        values = (self.efid, self.density, self.coverage, self.precision, self.recall, self.alignment)
        if not all(math.isfinite(v) for v in values):
            raise ValidationError("report", f"non-finite metric in {self.system} report")
        if not 0.0 <= self.coverage <= 100.0:
            raise ValidationError("coverage", f"{self.coverage} outside [0, 100]")

    def to_dict(self) -> Dict:
        return asdict(self)


def append_report(path: Path, report: MetricReport) -> None:
    """Append one JSON line to a report file."""
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "a") as fh:
            fh.write(json.dumps(report.to_dict(), sort_keys=True) + "\n")
    except OSError as exc:
        raise ArtifactIOError(str(path), f"report write failed: {exc}") from exc


def load_reports(path: Path) -> List[MetricReport]:
    if not path.exists():
        return []
    return [MetricReport(**json.loads(line)) for line in path.read_text().splitlines() if line.strip()]


def score_images(
    encoder: UnderstandingEncoder,
    scorer: AlignmentScorer,
    real_images: torch.Tensor,
    fake_images: torch.Tensor,
    prompts: Sequence[str],
    system: str,
    k: int,
    config_hash: str,
    step: Optional[int] = None,
) -> MetricReport:
    """Every metric for one generated set against one real set."""
    real = extract_features(encoder, real_images, "real")
    fake = extract_features(encoder, fake_images, "generated")
    density, coverage = density_coverage(real, fake, k)
    precision, recall = precision_recall(real, fake, k)
    return MetricReport(
        system=system,
        efid=efid(real, fake),
        density=density,
        coverage=coverage,
        precision=precision,
        recall=recall,
        alignment=prompt_alignment_score(scorer, encoder, fake_images, prompts),
        k=k,
        n_real=real.n,
        n_fake=fake.n,
        config_hash=config_hash,
        encoder_hash=encoder.param_hash or "",
        step=step,
    )


def evaluation_prompts(val: ShapesDataset, n: int) -> List[str]:
    """Val captions cycled to length ``n``."""
    return [val.captions[i % len(val)] for i in range(n)]


def evaluate_system(
    system,
    encoder: UnderstandingEncoder,
    scorer: AlignmentScorer,
    val: ShapesDataset,
    sampler: SamplerConfig,
    eval_cfg: EvalConfig,
    config_hash: str,
    n_samples: Optional[int] = None,
    step: Optional[int] = None,
) -> MetricReport:
    """
    Generate ``n_samples`` images from val prompts with ``system`` (anything
    with ``generate(prompts, sampler)`` returning images) and score them
    against the val images.

    Raises
    ------
    ValidationError
        If ``n_samples`` (or the val split) is smaller than feature dim + 1.
    """
    n = eval_cfg.n_samples if n_samples is None else n_samples
    if n < encoder.embed_dim + 1:
        raise ValidationError("n_samples", f"need at least d + 1 = {encoder.embed_dim + 1}, got {n}")
    prompts = evaluation_prompts(val, n)
    batch = system.generate(prompts, sampler)
    real_images = val.images(range(min(n, len(val))))
    report = score_images(encoder, scorer, real_images, batch.images, prompts, system.name, eval_cfg.k, config_hash, step)
    logger.info(
        "%s: eFID %.3f density %.1f coverage %.1f alignment %.3f",
        report.system, report.efid, report.density, report.coverage, report.alignment,
    )
    return report
