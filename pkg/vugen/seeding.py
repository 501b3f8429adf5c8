"""
vugen/seeding.py

All randomness flows from named seeds. Training loops draw their batch and
noise for step ``s`` from generators seeded by ``(seed, s)``, so a run
resumed from a checkpoint replays exactly the same steps.
"""

from __future__ import annotations

import numpy as np
import torch


def derive_seed(*parts: int) -> int:
    """Stable 63-bit seed from a tuple of integers."""
    state = np.random.SeedSequence([int(p) % (1 << 64) for p in parts]).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1])) & ((1 << 63) - 1)


def torch_generator(*parts: int, device: str | torch.device = "cpu") -> torch.Generator:
    gen = torch.Generator(device=device)
    gen.manual_seed(derive_seed(*parts))
    return gen


def batch_indices(n: int, batch_size: int, seed: int, step: int) -> np.ndarray:
    """Indices of the minibatch used at ``step`` (without replacement)."""
    rng = np.random.default_rng(derive_seed(seed, step))
    return rng.choice(n, size=min(batch_size, n), replace=False)


def init_seed(seed: int, *tag: int) -> None:
    """Seed torch's global generator before building a network."""
    torch.manual_seed(derive_seed(seed, *tag))
