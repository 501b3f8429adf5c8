import pytest
import torch

from vugen import config
from vugen.encoder import (
    UnderstandingEncoder,
    encode_dataset,
    load_encoder,
    patchify,
    pretrain_encoder,
    save_encoder,
    unpatchify,
)
from vugen.errors import EncoderStateError, StageMismatchError, ValidationError

from conftest import TINY_ENCODER


def test_patchify_round_trip(val_split):
    images = val_split.images(range(2))
    patches = patchify(images, 4)
    assert patches.shape == (2, config.N_PATCHES, 48)
    assert torch.equal(unpatchify(patches, 4), images)


def test_encode_requires_a_frozen_encoder(val_split):
    encoder = UnderstandingEncoder.from_config(TINY_ENCODER)
    with pytest.raises(EncoderStateError):
        encoder.encode(val_split.images(range(1)))


def test_latent_grid_shape(frozen_encoder, val_split):
    z = encode_dataset(frozen_encoder, val_split.images(range(3)), batch_size=2)
    assert z.shape == (3, config.N_PATCHES, TINY_ENCODER.embed_dim)
    with pytest.raises(ValidationError):
        frozen_encoder.encoder_features(val_split.images(range(1)), TINY_ENCODER.depth)


def test_without_positions_encoding_commutes_with_patch_permutation(frozen_encoder, val_split):
    patches = patchify(val_split.images(range(2)), 4)
    perm = torch.randperm(config.N_PATCHES, generator=torch.Generator().manual_seed(0))
    with torch.no_grad():
        out = frozen_encoder.encode_patches(patches, zero_positional=True)
        permuted = frozen_encoder.encode_patches(patches[:, perm], zero_positional=True)
    assert torch.allclose(permuted, out[:, perm], atol=1e-5)


def test_pretraining_freezes_and_checkpoint_restores(tmp_path, train_split, val_split):
    result = pretrain_encoder(train_split, val_split, TINY_ENCODER, seed=0)
    encoder = result.encoder
    assert len(result.losses) == TINY_ENCODER.steps
    assert all(0.0 <= v <= 1.0 for v in result.probes.as_dict().values())
    assert not any(p.requires_grad for p in encoder.parameters())

    digest = save_encoder(tmp_path / "encoder", result, TINY_ENCODER)
    assert digest == encoder.param_hash
    loaded = load_encoder(tmp_path / "encoder")
    assert loaded.param_hash == encoder.param_hash
    images = val_split.images(range(2))
    assert torch.equal(loaded.encode(images), encoder.encode(images))


def test_hash_drift_is_detected(frozen_encoder):
    with torch.no_grad():
        frozen_encoder.norm.weight.add_(1.0)
    with pytest.raises(StageMismatchError):
        frozen_encoder.verify_hash()
