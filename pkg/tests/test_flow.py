import pytest
import torch

from vugen.config import SamplerConfig
from vugen.errors import ShapeError, ValidationError
from vugen.flow import cfg_velocity, euler_integrate, flow_matching_loss, interpolate, velocity_target
from vugen.genmodel import sample_latents


def test_interpolant_endpoints_and_affinity():
    gen = torch.Generator().manual_seed(0)
    x = torch.randn(4, 8, 3, generator=gen, dtype=torch.float64)
    eps = torch.randn(4, 8, 3, generator=gen, dtype=torch.float64)
    assert torch.equal(interpolate(x, eps, 0.0), eps)
    assert torch.equal(interpolate(x, eps, 1.0), x)
    t = torch.rand(4, generator=gen, dtype=torch.float64)
    mid = interpolate(x, eps, t)
    expected = t[:, None, None] * x + (1 - t[:, None, None]) * eps
    assert torch.allclose(mid, expected, atol=1e-12, rtol=0)
    # affine in t: x_t - x_s = (t - s)(x - eps)
    diff = interpolate(x, eps, 0.7) - interpolate(x, eps, 0.2)
    assert torch.allclose(diff, 0.5 * (x - eps), atol=1e-12, rtol=0)


def test_interpolant_rejects_bad_inputs():
    x = torch.zeros(2, 3)
    with pytest.raises(ShapeError):
        interpolate(x, torch.zeros(2, 4), 0.5)
    with pytest.raises(ValidationError):
        interpolate(x, x, torch.tensor([0.5, 1.5]))


def test_oracle_velocity_has_zero_loss():
    gen = torch.Generator().manual_seed(1)
    x, eps = torch.randn(3, 5, generator=gen), torch.randn(3, 5, generator=gen)
    assert float(flow_matching_loss(velocity_target(x, eps), x, eps)) == 0.0


def test_flow_loss_hand_arithmetic():
    x = torch.tensor([[1.0, 2.0]])
    eps = torch.tensor([[0.0, 1.0]])
    # target (1, 1), prediction (0, 3) -> ((1)^2 + (-2)^2) / 2
    assert float(flow_matching_loss(torch.tensor([[0.0, 3.0]]), x, eps)) == pytest.approx(2.5)


def test_cfg_identities_and_affinity():
    gen = torch.Generator().manual_seed(2)
    v_c, v_u = torch.randn(2, 6, generator=gen), torch.randn(2, 6, generator=gen)
    assert torch.equal(cfg_velocity(v_c, v_u, 0.0), v_u)
    assert torch.allclose(cfg_velocity(v_c, v_u, 1.0), v_c, atol=1e-7)
    a, b = cfg_velocity(v_c, v_u, 1.5), cfg_velocity(v_c, v_u, 3.5)
    assert torch.allclose(cfg_velocity(v_c, v_u, 2.5), 0.5 * (a + b), atol=1e-6)


def test_cfg_rejects_negative_scale_and_shape_mismatch():
    with pytest.raises(ValidationError):
        cfg_velocity(torch.zeros(2), torch.zeros(2), -1.0)
    with pytest.raises(ShapeError):
        cfg_velocity(torch.zeros(2), torch.zeros(3), 1.0)


@pytest.mark.parametrize("steps", [1, 4, 32])
def test_euler_reaches_point_mass_target(steps):
    target = torch.tensor([[2.0, -1.0, 0.5]], dtype=torch.float64)
    # exact velocity of the straight path towards a point mass
    field = lambda x, t: (target - x) / (1 - t[:, None])  # noqa: E731
    x0 = torch.randn(16, 3, dtype=torch.float64, generator=torch.Generator().manual_seed(steps))
    out = euler_integrate(field, x0, steps)
    assert torch.allclose(out, target.expand_as(out), atol=1e-6, rtol=0)


def test_euler_rejects_zero_steps():
    with pytest.raises(ValidationError):
        euler_integrate(lambda x, t: x, torch.zeros(1, 1), 0)


def test_gaussian_oracle_endpoint_moments():
    mu, sigma = 1.5, 0.5

    def field(z, t):
        t = t[:, None]
        denom = t**2 * sigma**2 + (1 - t) ** 2
        return mu + (t * sigma**2 - (1 - t)) / denom * (z - t * mu)

    sampler = SamplerConfig(steps=64, seed=0)
    z = sample_latents(None, sampler, field=field, shape=(10000, 1))
    assert float(z.mean()) == pytest.approx(mu, rel=0.03)
    assert float(z.std()) == pytest.approx(sigma, rel=0.05)


def test_sampler_needs_shape_with_injected_field():
    with pytest.raises(ValidationError):
        sample_latents(None, SamplerConfig(), field=lambda z, t: z)
