"""
vugen/ema.py

Exponential moving average of trainable parameters, used for
evaluation-time weights of the latent generator.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Dict, Mapping

import torch
from torch import nn

from vugen.errors import ShapeError, ValidationError


@dataclass
class EmaState:
    shadow: Dict[str, torch.Tensor]
    decay: float
    activation_step: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.decay <= 1.0:
            raise ValidationError("decay", f"must lie in [0, 1], got {self.decay}")


def init_ema(params: Mapping[str, torch.Tensor], decay: float, activation_step: int = 0) -> EmaState:
    return EmaState({k: v.detach().clone() for k, v in params.items()}, decay, activation_step)


@torch.no_grad()
def ema_update(state: EmaState, params: Mapping[str, torch.Tensor]) -> EmaState:
    """``shadow <- d * shadow + (1 - d) * params`` elementwise."""
    if state.shadow.keys() != params.keys():
        raise ShapeError(f"EMA keys differ: {sorted(set(state.shadow) ^ set(params))}")
    d = state.decay
    shadow = {}
    for name, value in params.items():
        old = state.shadow[name]
        if old.shape != value.shape:
            raise ShapeError(f"EMA shadow {name}: {tuple(old.shape)} vs params {tuple(value.shape)}")
        shadow[name] = d * old + (1.0 - d) * value.detach()
    return EmaState(shadow, d, state.activation_step)


def ema_step(state: EmaState, params: Mapping[str, torch.Tensor], step: int) -> EmaState:
    """Track raw weights before ``activation_step``, average afterwards."""
    if step < state.activation_step:
        return EmaState({k: v.detach().clone() for k, v in params.items()}, state.decay, state.activation_step)
    return ema_update(state, params)


def trainable_state(module: nn.Module) -> Dict[str, torch.Tensor]:
    return {name: p for name, p in module.named_parameters() if p.requires_grad}


def with_shadow(module: nn.Module, state: EmaState) -> nn.Module:
    """Copy of ``module`` carrying the EMA weights."""
    averaged = copy.deepcopy(module)
    named = dict(averaged.named_parameters())
    with torch.no_grad():
        for name, value in state.shadow.items():
            named[name].copy_(value)
    return averaged.eval()
