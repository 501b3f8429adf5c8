import numpy as np
import pytest
import torch

from vugen.errors import NumericalError, ShapeError, ValidationError
from vugen.reducer import MLPReducer, ReducerSpec, build_reducer, fit_latent_stats, pca_fit, reduce


def test_spec_requires_ratio_to_divide_dim():
    assert ReducerSpec(64, 16).output_dim == 4
    with pytest.raises(ValidationError):
        ReducerSpec(64, 3)


def test_pca_components_are_orthonormal():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(500, 16)) @ rng.normal(size=(16, 16))
    reducer = pca_fit(x, ReducerSpec(16, 4))
    c = reducer.components.double()
    assert torch.allclose(c.T @ c, torch.eye(4, dtype=torch.float64), atol=1e-5)
    ev = reducer.explained_variance
    assert bool((ev[:-1] >= ev[1:]).all())


def test_pca_recovers_a_line_direction():
    t = np.linspace(-3, 3, 50)
    # points on the line through (1, 2) plus a tiny orthogonal wobble uncorrelated with t
    x = np.stack([t, 2 * t], axis=1) + 1e-4 * np.abs(t)[:, None] * np.array([[2.0, -1.0]])
    reducer = pca_fit(x, ReducerSpec(2, 2))
    first = reducer.components[:, 0].double().numpy()
    expected = np.array([1.0, 2.0]) / np.sqrt(5.0)
    assert min(np.abs(first - expected).max(), np.abs(first + expected).max()) < 1e-6


def test_pca_beats_random_orthonormal_projections():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(400, 16)) * np.linspace(3.0, 0.1, 16)
    spec = ReducerSpec(16, 4)
    reducer = pca_fit(x, spec)
    xt = torch.from_numpy(x).float()
    pca_err = float(((reducer.reconstruct(reduce(xt, reducer)) - xt) ** 2).mean())
    mean = xt.mean(dim=0)
    for _ in range(100):
        q, _ = np.linalg.qr(rng.normal(size=(16, 4)))
        q = torch.from_numpy(q).float()
        err = float(((((xt - mean) @ q) @ q.T + mean - xt) ** 2).mean())
        assert pca_err <= err + 1e-6


def test_pca_rejects_too_few_samples_and_low_rank():
    with pytest.raises(ValidationError):
        pca_fit(np.zeros((3, 16)), ReducerSpec(16, 4))
    x = np.zeros((40, 16))
    x[:, 0] = np.arange(40)
    with pytest.raises(NumericalError) as exc:
        pca_fit(x, ReducerSpec(16, 4))
    assert exc.value.achieved_rank == 1


def test_reduce_checks_channel_dim():
    reducer = build_reducer("mlp", ReducerSpec(16, 4))
    assert isinstance(reducer, MLPReducer)
    assert reduce(torch.zeros(2, 64, 16), reducer).shape == (2, 64, 4)
    with pytest.raises(ShapeError):
        reduce(torch.zeros(2, 64, 8), reducer)
    with pytest.raises(ValidationError):
        build_reducer("svd", ReducerSpec(16, 4))


def test_latent_stats_round_trip_and_eps_floor():
    z = torch.randn(32, 8, 3)
    z[..., 2] = 5.0
    stats = fit_latent_stats(z)
    standardized = stats.standardize(z)
    assert torch.allclose(standardized[..., :2].reshape(-1, 2).mean(0), torch.zeros(2), atol=1e-5)
    assert float(stats.std[2]) > 0
    assert torch.allclose(stats.destandardize(standardized), z, atol=1e-4)
