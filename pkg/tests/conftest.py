"""Shared fixtures: tiny network shapes and a small rendered corpus."""

from __future__ import annotations

import pytest
import torch

from vugen.config import DecoderConfig, EncoderConfig, GeneratorConfig
from vugen.encoder import UnderstandingEncoder
from vugen.genmodel import TextTower
from vugen.seeding import init_seed
from vugen.toydata import ensure_dataset

TINY_ENCODER = EncoderConfig(embed_dim=16, depth=4, heads=2, steps=5, scorer_steps=5, batch_size=16)
TINY_DECODER = DecoderConfig(
    base_width=8,
    stages=2,
    transformer_blocks=1,
    heads=2,
    ldm_width=16,
    ldm_depth=1,
    steps=3,
    batch_size=8,
    decode_steps=2,
    eval_every=0,
    vae_steps=3,
)
TINY_GENERATOR = GeneratorConfig(width=16, depth=2, heads=2, text_steps=3, steps=6, batch_size=8, checkpoint_every=3)


@pytest.fixture(scope="session")
def shapes_data(tmp_path_factory):
    """(train, val) splits small enough to render in well under a second."""
    root = tmp_path_factory.mktemp("shapes")
    return ensure_dataset(root, n_train=64, n_val=32, seed=0)


@pytest.fixture(scope="session")
def train_split(shapes_data):
    return shapes_data[0]


@pytest.fixture(scope="session")
def val_split(shapes_data):
    return shapes_data[1]


@pytest.fixture()
def frozen_encoder():
    """Randomly initialised encoder, frozen (weights are irrelevant for plumbing tests)."""
    init_seed(0, 101)
    return UnderstandingEncoder.from_config(TINY_ENCODER).freeze()


@pytest.fixture()
def text_tower():
    init_seed(0, 301)
    tower = TextTower.from_config(TINY_GENERATOR)
    for p in tower.parameters():
        p.requires_grad_(False)
    return tower.eval()


@pytest.fixture()
def float64():
    """Run a test with float64 as the default dtype."""
    previous = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(previous)
