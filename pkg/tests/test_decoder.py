import pytest
import torch

from vugen import config
from vugen.decoder import (
    IMAGE_SHAPE,
    DecoderLossWeights,
    PixelDecoder,
    build_reconstruction_model,
    compute_decoder_loss,
    decode,
    initial_noise,
    load_reconstruction,
    pdd_velocity,
    perceptual_loss,
    reconstruct,
    repa_align_loss,
    save_reconstruction,
    train_pdd_decoder,
)
from vugen.encoder import UnderstandingEncoder
from vugen.errors import DependencyError, ShapeError, StageMismatchError, ValidationError
from vugen.reducer import ReducerSpec
from vugen.seeding import init_seed

from conftest import TINY_DECODER, TINY_ENCODER


def _images(n, seed=0):
    gen = torch.Generator().manual_seed(seed)
    return torch.rand(n, *IMAGE_SHAPE, generator=gen) * 2 - 1


# -----------------------------
# Losses
# -----------------------------


def test_perceptual_loss_is_symmetric_and_zero_on_identical(frozen_encoder):
    a, b = _images(3, 0), _images(3, 1)
    assert float(perceptual_loss(frozen_encoder, a, a)) == 0.0
    assert torch.allclose(perceptual_loss(frozen_encoder, a, b), perceptual_loss(frozen_encoder, b, a))
    assert float(perceptual_loss(frozen_encoder, a, b)) > 0


def test_alignment_loss_range():
    h = torch.randn(2, 64, 8)
    assert abs(float(repa_align_loss(h, h))) < 1e-6
    assert abs(float(repa_align_loss(h, -h)) - 2.0) < 1e-6
    with pytest.raises(ShapeError):
        repa_align_loss(h, torch.randn(2, 64, 4))


def test_pixel_decoder_checks_conditioning_shape():
    decoder = PixelDecoder(cond_dim=4, base_width=8, stages=2, blocks=1, heads=2, repa_dim=16)
    x = _images(2)
    assert decoder(x, torch.full((2,), 0.5), torch.randn(2, config.N_PATCHES, 4)).shape == x.shape
    with pytest.raises(ShapeError):
        decoder(x, torch.full((2,), 0.5), torch.randn(2, config.N_PATCHES, 3))
    with pytest.raises(ShapeError):
        decoder(x, torch.full((2,), 0.5), torch.randn(3, config.N_PATCHES, 4))


def test_decoder_loss_gradient_matches_finite_differences(float64, frozen_encoder):
    spec = ReducerSpec(frozen_encoder.embed_dim, 4)
    model = build_reconstruction_model("pdd", "mlp", spec, TINY_DECODER, seed=0)
    model.train()
    images = _images(3)
    latents = frozen_encoder.encode(images)
    gen = torch.Generator().manual_seed(9)
    t = torch.rand(3, generator=gen)
    noise = torch.randn(images.shape, generator=gen)
    weights = DecoderLossWeights(perceptual=0.5, repa=0.5)

    def loss():
        return compute_decoder_loss(model, frozen_encoder, images, latents, weights, t=t, noise=noise)[0]

    params = dict(model.named_parameters())
    names = [n for n in params if n.startswith("reducer.")][:4] + [n for n in params if n.startswith("decoder.")]
    grads = dict(zip(names, torch.autograd.grad(loss(), [params[n] for n in names], allow_unused=True)))

    rng = torch.Generator().manual_seed(4)
    h = 1e-6
    checked = 0
    for name in names[:4] + [names[int(i)] for i in torch.randint(4, len(names), (8,), generator=rng)]:
        p, g = params[name], grads[name]
        analytic_all = torch.zeros_like(p) if g is None else g
        j = int(torch.randint(p.numel(), (1,), generator=rng))
        flat = p.data.view(-1)
        original = float(flat[j])
        with torch.no_grad():
            flat[j] = original + h
            plus = float(loss())
            flat[j] = original - h
            minus = float(loss())
            flat[j] = original
        numeric = (plus - minus) / (2 * h)
        analytic = float(analytic_all.view(-1)[j])
        assert abs(numeric - analytic) <= 1e-4 * max(1.0, abs(analytic)), name
        checked += 1
    assert checked >= 10


def test_decoder_loss_needs_draws_or_a_generator(frozen_encoder):
    model = build_reconstruction_model("pdd", "mlp", ReducerSpec(frozen_encoder.embed_dim, 4), TINY_DECODER)
    images = _images(2)
    with pytest.raises(ValidationError):
        compute_decoder_loss(model, frozen_encoder, images, frozen_encoder.encode(images))


# -----------------------------
# Decoding
# -----------------------------


@pytest.mark.parametrize("steps", [1, 4, 16])
def test_point_mass_field_decodes_exactly(steps):
    target = _images(2, 3) * 0.9
    reduced = torch.zeros(2, config.N_PATCHES, 4)

    def field(x, t):
        return (target - x) / (1 - t).reshape(-1, 1, 1, 1)

    out = decode(None, reduced, steps, seed=0, field=field)
    assert torch.allclose(out, target, atol=1e-5)


def test_single_step_with_constant_field_is_clamped_shift():
    reduced = torch.zeros(2, config.N_PATCHES, 4)
    shift = torch.full((2, *IMAGE_SHAPE), 0.75)
    out = decode(None, reduced, 1, seed=3, field=lambda x, t: shift)
    expected = (initial_noise((2, *IMAGE_SHAPE), 3, reduced) + 0.75).clamp(-1, 1)
    assert torch.equal(out, expected)
    assert float(out.max()) <= 1.0 and float(out.min()) >= -1.0


def test_decode_without_model_or_field_fails():
    with pytest.raises(DependencyError):
        decode(None, torch.zeros(1, config.N_PATCHES, 4), 2)
    with pytest.raises(ValidationError):
        decode(None, torch.zeros(1, config.N_PATCHES, 4), 0, field=lambda x, t: x)


def test_ldm_decode_needs_the_vae(frozen_encoder):
    model = build_reconstruction_model("ldm", "mlp", ReducerSpec(frozen_encoder.embed_dim, 4), TINY_DECODER)
    with pytest.raises(DependencyError):
        decode(model, torch.zeros(1, config.N_PATCHES, 4), 2)


def test_unknown_decoder_kind_is_rejected(frozen_encoder):
    with pytest.raises(ValidationError):
        build_reconstruction_model("gan", "mlp", ReducerSpec(frozen_encoder.embed_dim, 4), TINY_DECODER)


# -----------------------------
# Training and checkpoints
# -----------------------------


@pytest.mark.parametrize("variant", ["pca", "mlp"])
def test_training_fits_stats_and_round_trips(tmp_path, frozen_encoder, train_split, val_split, variant):
    result = train_pdd_decoder(frozen_encoder, train_split, val_split, TINY_DECODER, variant=variant, ratio=4, seed=0)
    model = result.model
    assert bool(model.stats_fitted)
    assert [row["step"] for row in result.history] == list(range(TINY_DECODER.steps))
    assert result.final_val_mse == result.final_val_mse  # not NaN
    assert not any(p.requires_grad for p in model.parameters())

    save_reconstruction(tmp_path / "recon", result, frozen_encoder, TINY_DECODER)
    loaded, manifest = load_reconstruction(tmp_path / "recon", frozen_encoder)
    assert manifest["metadata"]["variant"] == variant
    latents = frozen_encoder.encode(val_split.images(range(2)))
    assert torch.equal(reconstruct(loaded, latents, 2, seed=1), reconstruct(model, latents, 2, seed=1))


def test_loading_against_another_encoder_is_refused(tmp_path, frozen_encoder, train_split, val_split):
    result = train_pdd_decoder(frozen_encoder, train_split, val_split, TINY_DECODER, ratio=4, steps=1)
    save_reconstruction(tmp_path / "recon", result, frozen_encoder, TINY_DECODER)
    init_seed(1, 101)
    other = UnderstandingEncoder.from_config(TINY_ENCODER).freeze()
    with pytest.raises(StageMismatchError):
        load_reconstruction(tmp_path / "recon", other)


def test_pdd_velocity_is_image_shaped(frozen_encoder):
    model = build_reconstruction_model("pdd", "mlp", ReducerSpec(frozen_encoder.embed_dim, 4), TINY_DECODER).eval()
    x = _images(2)
    v = pdd_velocity(model, x, 0.3, torch.randn(2, config.N_PATCHES, 4))
    assert v.shape == x.shape
    with pytest.raises(ShapeError):
        pdd_velocity(model, torch.zeros(2, 3, 16, 16), 0.3, torch.randn(2, config.N_PATCHES, 4))
