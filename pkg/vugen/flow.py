"""
vugen/flow.py

Rectified-flow primitives shared by the latent generator and the diffusion
decoders.

Convention: ``t = 0`` is pure noise, ``t = 1`` is data, the interpolant is
``x_t = t * x + (1 - t) * eps`` and the regression target is ``x - eps``.
"""

from __future__ import annotations

from typing import Callable, Optional

import torch

from vugen.errors import ShapeError, ValidationError

VelocityField = Callable[[torch.Tensor, torch.Tensor], torch.Tensor]


def _broadcast_time(t: torch.Tensor | float, like: torch.Tensor) -> torch.Tensor:
    t = torch.as_tensor(t, dtype=like.dtype, device=like.device)
    if t.ndim == 0:
        return t
    return t.reshape(-1, *([1] * (like.ndim - 1)))


def interpolate(data: torch.Tensor, noise: torch.Tensor, t: torch.Tensor | float) -> torch.Tensor:
    """
    Point on the straight noise -> data path.

    Raises
    ------
    ShapeError
        If ``data`` and ``noise`` differ in shape.
    ValidationError
        If any ``t`` lies outside [0, 1].
    """
    if data.shape != noise.shape:
        raise ShapeError(f"data {tuple(data.shape)} and noise {tuple(noise.shape)} differ")
    t_arr = torch.as_tensor(t)
    if bool(((t_arr < 0) | (t_arr > 1)).any()):
        raise ValidationError("t", "must lie in [0, 1]")
    t_b = _broadcast_time(t, data)
    return t_b * data + (1 - t_b) * noise


def velocity_target(data: torch.Tensor, noise: torch.Tensor) -> torch.Tensor:
    return data - noise


def flow_matching_loss(predicted: torch.Tensor, data: torch.Tensor, noise: torch.Tensor) -> torch.Tensor:
    """Mean over batch and elements of ``(data - noise - predicted)^2``."""
    return ((velocity_target(data, noise) - predicted) ** 2).mean()


def sample_times(batch: int, generator: torch.Generator, like: torch.Tensor) -> torch.Tensor:
    """Uniform t on [0, 1] per item."""
    return torch.rand(batch, generator=generator, device=generator.device).to(like)


def sample_noise(shape, generator: torch.Generator, like: torch.Tensor) -> torch.Tensor:
    return torch.randn(shape, generator=generator, device=generator.device).to(like)


def cfg_velocity(v_cond: torch.Tensor, v_uncond: torch.Tensor, scale: float) -> torch.Tensor:
    """Classifier-free guidance: ``v_uncond + s * (v_cond - v_uncond)``."""
    if v_cond.shape != v_uncond.shape:
        raise ShapeError(f"conditional {tuple(v_cond.shape)} and unconditional {tuple(v_uncond.shape)} differ")
    if scale < 0:
        raise ValidationError("cfg_scale", f"must be >= 0, got {scale}")
    return v_uncond + scale * (v_cond - v_uncond)


def euler_integrate(field: VelocityField, x0: torch.Tensor, steps: int, progress: Optional[Callable[[int], None]] = None) -> torch.Tensor:
    """
    Integrate ``dx/dt = field(x, t)`` from t = 0 to 1 with a uniform grid
    ``t_k = k / steps``. The last evaluated time is ``1 - 1/steps``, so
    fields with a ``1 / (1 - t)`` factor stay finite.
    """
    if steps < 1:
        raise ValidationError("steps", f"must be >= 1, got {steps}")
    h = 1.0 / steps
    x = x0
    for k in range(steps):
        t = torch.full((x.shape[0],), k * h, dtype=x.dtype, device=x.device)
        x = x + h * field(x, t)
        if progress is not None:
            progress(k)
    return x
