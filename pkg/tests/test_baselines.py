import pytest
import torch

from vugen import config
from vugen.baselines import (
    TinyVAE,
    VaeCodec,
    build_vae_corpus,
    gaussian_kl,
    load_vae,
    save_vae,
    train_decoupled,
    train_repa_variant,
    train_vae,
    validate_baseline_config,
)
from vugen.checkpoints import module_hash
from vugen.config import BaselineConfig
from vugen.errors import ValidationError

from conftest import TINY_DECODER, TINY_GENERATOR


@pytest.fixture()
def vae():
    torch.manual_seed(0)
    return TinyVAE(width=8).eval()


def test_kl_of_shifted_unit_gaussian():
    assert float(gaussian_kl(torch.tensor(1.0), torch.tensor(0.0))) == pytest.approx(0.5)
    assert float(gaussian_kl(torch.tensor(0.0), torch.tensor(0.0))) == 0.0


def test_vae_token_shapes(vae, val_split):
    images = val_split.images(range(3))
    tokens = vae.encode_tokens(images)
    assert tokens.shape == (3, config.N_PATCHES, config.VAE_LATENT_CHANNELS)
    assert vae.decode_tokens(tokens).shape == images.shape
    out = VaeCodec(vae).decode(tokens, seed=0)
    assert float(out.abs().max()) <= 1.0


@pytest.mark.parametrize(
    "cfg, field",
    [
        (BaselineConfig(variant="gan"), "variant"),
        (BaselineConfig(variant="repa", align_layer=2), "align_layer"),
        (BaselineConfig(variant="repa", align_layer=-1), "align_layer"),
        (BaselineConfig(variant="repa", align_layer=0, align_weight=-0.1), "align_weight"),
    ],
)
def test_invalid_baseline_configs(cfg, field):
    with pytest.raises(ValidationError) as info:
        validate_baseline_config(cfg, depth=2)
    assert info.value.field == field


def test_vae_training_improves_and_round_trips(tmp_path, train_split, val_split):
    result = train_vae(train_split, val_split, TINY_DECODER, seed=0)
    assert len(result.losses) == TINY_DECODER.vae_steps
    assert all(loss == loss for loss in result.losses)
    save_vae(tmp_path / "vae", result, TINY_DECODER)
    assert module_hash(load_vae(tmp_path / "vae")) == module_hash(result.vae)


def test_corpus_is_standardized_and_records_hashes(vae, train_split, frozen_encoder):
    corpus = build_vae_corpus(vae, train_split, encoder=frozen_encoder)
    assert corpus.latent_shape == (config.N_PATCHES, config.VAE_LATENT_CHANNELS)
    flat = corpus.latents.reshape(-1, corpus.latents.shape[-1])
    assert torch.allclose(flat.mean(0), torch.zeros(flat.shape[-1]), atol=1e-4)
    assert corpus.upstream == {"vae": module_hash(vae), "encoder": frozen_encoder.param_hash}
    assert corpus.align_targets.shape == (len(train_split), config.N_PATCHES, frozen_encoder.embed_dim)


def test_repa_needs_alignment_targets(vae, train_split, text_tower):
    corpus = build_vae_corpus(vae, train_split)
    with pytest.raises(ValidationError):
        train_repa_variant(corpus, text_tower, TINY_GENERATOR, BaselineConfig("repa", 1, 0.5), module_hash(vae), "", steps=1)


def test_zero_alignment_weight_matches_decoupled(vae, train_split, text_tower, frozen_encoder):
    corpus = build_vae_corpus(vae, train_split, encoder=frozen_encoder)
    vae_hash = module_hash(vae)
    plain = train_decoupled(corpus, text_tower, TINY_GENERATOR, vae_hash, seed=2)
    aligned = train_repa_variant(
        corpus,
        text_tower,
        TINY_GENERATOR,
        BaselineConfig("repa", align_layer=1, align_weight=0.0),
        vae_hash,
        frozen_encoder.param_hash,
        seed=2,
    )
    assert corpus.target == "decoupled"
    assert plain.trainer.corpus.target == "decoupled"
    assert aligned.trainer.corpus.target == "repa"
    for (name, a), (_, b) in zip(plain.generator.state_dict().items(), aligned.generator.state_dict().items()):
        assert torch.equal(a, b), name


def test_alignment_term_changes_training(vae, train_split, text_tower, frozen_encoder):
    corpus = build_vae_corpus(vae, train_split, encoder=frozen_encoder)
    vae_hash = module_hash(vae)
    plain = train_decoupled(corpus, text_tower, TINY_GENERATOR, vae_hash, seed=2, steps=2)
    aligned = train_repa_variant(
        corpus, text_tower, TINY_GENERATOR, BaselineConfig("repa", 1, 0.5), vae_hash, frozen_encoder.param_hash, seed=2, steps=2
    )
    assert "align" in aligned.trainer.history[-1]
    assert module_hash(plain.generator) != module_hash(aligned.generator)
