"""
vugen/reducer.py

Dimension reducers g mapping the understanding latent (N x D) to the
reduced latent (N x D/r), acting per patch on channels only:

- ``PCAReducer``: frozen top-(D/r) principal directions of the training
  set's per-patch embeddings (the baseline)
- ``MLPReducer``: two hidden layers of width D with SiLU, trained jointly
  with the decoder

``LatentStats`` carries the per-channel standardization used between the
reduced space and the unit-Gaussian flow prior.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict

import numpy as np
import torch
from scipy import linalg
from torch import nn

from vugen import config
from vugen.errors import NumericalError, ShapeError, ValidationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ReducerSpec:
    input_dim: int = config.ENCODER_EMBED_DIM
    ratio: int = config.REDUCTION_RATIO

    def __post_init__(self) -> None:
        if self.ratio < 1 or self.input_dim % self.ratio:
            raise ValidationError("ratio", f"{self.ratio} does not divide input dim {self.input_dim}")

    @property
    def output_dim(self) -> int:
        return self.input_dim // self.ratio


class PCAReducer(nn.Module):
    variant = "pca"

    def __init__(self, spec: ReducerSpec) -> None:
        super().__init__()
        self.spec = spec
        self.register_buffer("components", torch.zeros(spec.input_dim, spec.output_dim))
        self.register_buffer("mean", torch.zeros(spec.input_dim))
        self.register_buffer("explained_variance", torch.zeros(spec.output_dim))
        self.register_buffer("explained_variance_ratio", torch.zeros(spec.output_dim))

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return (z - self.mean) @ self.components

    def reconstruct(self, reduced: torch.Tensor) -> torch.Tensor:
        """Map back to the D-dimensional space (rank-D/r approximation)."""
        return reduced @ self.components.T + self.mean


class MLPReducer(nn.Module):
    variant = "mlp"

    def __init__(self, spec: ReducerSpec) -> None:
        super().__init__()
        self.spec = spec
        d = spec.input_dim
        self.net = nn.Sequential(
            nn.Linear(d, d),
            nn.SiLU(),
            nn.Linear(d, d),
            nn.SiLU(),
            nn.Linear(d, spec.output_dim),
        )

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return self.net(z)


def build_reducer(variant: str, spec: ReducerSpec) -> nn.Module:
    if variant == "pca":
        return PCAReducer(spec)
    if variant == "mlp":
        return MLPReducer(spec)
    raise ValidationError("variant", f"unknown reducer variant {variant!r}")


def pca_fit(latents: torch.Tensor | np.ndarray, spec: ReducerSpec) -> PCAReducer:
    """
    Fit PCA on per-patch embeddings.

    Parameters
    ----------
    latents : array-like, shape (..., D)
        All leading axes are flattened into samples.
    spec : ReducerSpec

    Returns
    -------
    PCAReducer
        Components are the top-(D/r) eigenvectors of the sample covariance in
        descending eigenvalue order; each column's largest-magnitude entry is
        made positive.

    Raises
    ------
    ValidationError
        If fewer than D samples are given or the last axis is not D.
    NumericalError
        If the centered data has rank below D/r.
    """
    x = latents.detach().cpu().double().numpy() if isinstance(latents, torch.Tensor) else np.asarray(latents, dtype=np.float64)
    if x.shape[-1] != spec.input_dim:
        raise ValidationError("latents", f"last axis {x.shape[-1]} != input dim {spec.input_dim}")
    x = x.reshape(-1, spec.input_dim)
    if x.shape[0] < spec.input_dim:
        raise ValidationError("latents", f"need at least {spec.input_dim} samples, got {x.shape[0]}")

    mean = x.mean(axis=0)
    centered = x - mean
    rank = int(np.linalg.matrix_rank(centered))
    k = spec.output_dim
    if rank < k:
        raise NumericalError(f"PCA needs {k} components but centered data has rank {rank}", achieved_rank=rank)

    cov = centered.T @ centered / (x.shape[0] - 1)
    eigvals, eigvecs = linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals, eigvecs = np.clip(eigvals[order], 0.0, None), eigvecs[:, order]
    top = eigvecs[:, :k]
    signs = np.sign(top[np.abs(top).argmax(axis=0), np.arange(k)])
    top = top * np.where(signs == 0, 1.0, signs)

    reducer = PCAReducer(spec)
    reducer.components.copy_(torch.from_numpy(top))
    reducer.mean.copy_(torch.from_numpy(mean))
    reducer.explained_variance.copy_(torch.from_numpy(eigvals[:k].copy()))
    reducer.explained_variance_ratio.copy_(torch.from_numpy(eigvals[:k] / max(eigvals.sum(), 1e-300)))
    logger.info("PCA fit: %d components keep %.3f of variance", k, float(reducer.explained_variance_ratio.sum()))
    return reducer


def reduce(z: torch.Tensor, reducer: nn.Module) -> torch.Tensor:
    """Apply ``reducer`` per patch row; ``z`` is ``(..., D)``."""
    if z.shape[-1] != reducer.spec.input_dim:
        raise ShapeError(f"latent channel dim {z.shape[-1]} != reducer input dim {reducer.spec.input_dim}")
    return reducer(z)


@dataclass
class LatentStats:
    """Per-channel mean / std of a reduced (or VAE) latent space."""

    mean: torch.Tensor
    std: torch.Tensor

    def standardize(self, z: torch.Tensor) -> torch.Tensor:
        return (z - self.mean.to(z)) / self.std.to(z)

    def destandardize(self, z: torch.Tensor) -> torch.Tensor:
        return z * self.std.to(z) + self.mean.to(z)

    def to_tensors(self, prefix: str = "stats") -> Dict[str, torch.Tensor]:
        return {f"{prefix}.mean": self.mean, f"{prefix}.std": self.std}

    @classmethod
    def from_tensors(cls, tensors: Dict[str, torch.Tensor], prefix: str = "stats") -> "LatentStats":
        return cls(mean=tensors[f"{prefix}.mean"], std=tensors[f"{prefix}.std"])


def fit_latent_stats(z: torch.Tensor, eps: float = config.STD_EPS, warn: bool = True) -> LatentStats:
    """
    Per-channel statistics over every axis but the last. Channels whose std
    falls below ``eps`` are floored at ``eps`` (logged as a warning).
    """
    flat = z.reshape(-1, z.shape[-1])
    mean = flat.mean(dim=0)
    std = flat.std(dim=0, unbiased=False)
    degenerate = std < eps
    if warn and bool(degenerate.any()):
        logger.warning("latent channels %s have std < %g; flooring at eps", degenerate.nonzero().flatten().tolist(), eps)
    return LatentStats(mean=mean, std=torch.where(degenerate, torch.full_like(std, eps), std))
