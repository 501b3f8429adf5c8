import numpy as np
import pytest

from vugen.errors import ValidationError
from vugen.metrics import (
    FeatureSet,
    MetricReport,
    append_report,
    density_coverage,
    efid,
    frechet_distance,
    kth_neighbor_distances,
    load_reports,
    precision_recall,
)


# -----------------------------
# Frechet distance
# -----------------------------


def test_identical_gaussians_have_zero_distance():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(6, 6))
    cov = a @ a.T
    mu = rng.normal(size=6)
    assert frechet_distance(mu, cov, mu, cov) <= 1e-10


@pytest.mark.parametrize("mu2, var2, expected", [(1.0, 1.0, 1.0), (0.0, 4.0, 1.0), (3.0, 9.0, 13.0)])
def test_univariate_closed_form(mu2, var2, expected):
    # (mu1 - mu2)^2 + (sigma1 - sigma2)^2
    assert frechet_distance([0.0], [[1.0]], [mu2], [[var2]]) == pytest.approx(expected, abs=1e-8)


def test_symmetry():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(5, 5)), rng.normal(size=(5, 5))
    c1, c2 = a @ a.T, b @ b.T
    m1, m2 = rng.normal(size=5), rng.normal(size=5)
    assert frechet_distance(m1, c1, m2, c2) == pytest.approx(frechet_distance(m2, c2, m1, c1), abs=1e-8)


def test_non_commuting_covariances_match_reference_root():
    from scipy import linalg

    rng = np.random.default_rng(2)
    a, b = rng.normal(size=(4, 4)), rng.normal(size=(4, 4))
    c1, c2 = a @ a.T + np.eye(4), b @ b.T + np.eye(4)
    root = linalg.sqrtm(c1 @ c2).real
    reference = np.trace(c1 + c2 - 2 * root)
    assert frechet_distance(np.zeros(4), c1, np.zeros(4), c2) == pytest.approx(reference, rel=1e-6)


def test_monte_carlo_efid_matches_closed_form():
    rng = np.random.default_rng(3)
    n, d = 20000, 3
    real = FeatureSet(rng.normal(size=(n, d)), "real")
    fake = FeatureSet(rng.normal(loc=1.0, scale=2.0, size=(n, d)), "generated")
    # d * ((1 - 0)^2 + (2 - 1)^2)
    assert efid(real, fake) == pytest.approx(6.0, rel=0.02)


def test_asymmetric_covariance_is_rejected():
    with pytest.raises(ValidationError):
        frechet_distance([0.0, 0.0], [[1.0, 0.5], [0.0, 1.0]], [0.0, 0.0], np.eye(2))


def test_gaussian_needs_more_samples_than_dims():
    with pytest.raises(ValidationError):
        FeatureSet(np.zeros((3, 4)), "real").gaussian()


def test_feature_set_rejects_non_finite():
    with pytest.raises(ValidationError):
        FeatureSet(np.array([[np.nan, 0.0]]), "generated")


# -----------------------------
# k-NN manifold metrics
# -----------------------------


def _brute_force_density_coverage(real, fake, k):
    n_real, n_fake = len(real), len(fake)
    radii = []
    for i in range(n_real):
        others = sorted(np.linalg.norm(real[i] - real[j]) for j in range(n_real) if j != i)
        radii.append(others[k - 1])
    hits = 0
    covered = 0
    for i in range(n_real):
        inside = [np.linalg.norm(fake[j] - real[i]) <= radii[i] for j in range(n_fake)]
        hits += sum(inside)
        covered += any(inside)
    return 100.0 * hits / (k * n_fake), 100.0 * covered / n_real


def test_hand_example():
    real = np.array([[0.0], [1.0]])
    fake = np.array([[0.5]])
    density, coverage = density_coverage(real, fake, k=1)
    assert density == pytest.approx(200.0)
    assert coverage == pytest.approx(100.0)


def test_far_away_samples_score_zero():
    real = np.random.default_rng(4).normal(size=(10, 2))
    assert density_coverage(real, real + 1e6, k=2) == (0.0, 0.0)


def test_matches_brute_force_on_random_instances():
    rng = np.random.default_rng(5)
    for _ in range(100):
        n_real, n_fake = rng.integers(6, 51), rng.integers(1, 51)
        k = int(rng.integers(1, 6))
        d = int(rng.integers(1, 4))
        real, fake = rng.normal(size=(n_real, d)), rng.normal(size=(n_fake, d))
        got = density_coverage(real, fake, k)
        want = _brute_force_density_coverage(real, fake, k)
        assert got[0] == pytest.approx(want[0], abs=1e-9)
        assert got[1] == pytest.approx(want[1], abs=1e-9)


def test_empty_fake_set_is_rejected():
    real = np.random.default_rng(7).normal(size=(10, 2))
    with pytest.raises(ValidationError):
        density_coverage(real, np.zeros((0, 2)), k=2)


def test_coverage_is_monotone_in_k():
    rng = np.random.default_rng(6)
    real, fake = rng.normal(size=(40, 3)), rng.normal(size=(30, 3))
    coverages = [density_coverage(real, fake, k)[1] for k in range(1, 6)]
    assert all(b >= a for a, b in zip(coverages, coverages[1:]))


def test_k_must_be_smaller_than_n():
    with pytest.raises(ValidationError):
        kth_neighbor_distances(np.zeros((3, 2)), 3)
    with pytest.raises(ValidationError):
        kth_neighbor_distances(np.zeros((3, 2)), 0)


def test_precision_recall_of_identical_sets():
    x = np.random.default_rng(7).normal(size=(30, 2))
    assert precision_recall(x, x, k=3) == (1.0, 1.0)


def test_precision_recall_of_disjoint_sets():
    x = np.random.default_rng(8).normal(size=(30, 2))
    assert precision_recall(x, x + 1e6, k=3) == (0.0, 0.0)


# -----------------------------
# Reports
# -----------------------------


def _report(**overrides):
    values = dict(
        system="vugen",
        efid=1.0,
        density=90.0,
        coverage=80.0,
        precision=0.9,
        recall=0.8,
        alignment=0.3,
        k=5,
        n_real=10,
        n_fake=10,
        config_hash="abc",
    )
    values.update(overrides)
    return MetricReport(**values)


def test_report_rejects_non_finite_and_out_of_range():
    with pytest.raises(ValidationError):
        _report(efid=float("nan"))
    with pytest.raises(ValidationError):
        _report(coverage=120.0)


def test_reports_append_as_json_lines(tmp_path):
    path = tmp_path / "reports" / "metrics.jsonl"
    append_report(path, _report())
    append_report(path, _report(system="decoupled", step=100))
    loaded = load_reports(path)
    assert [r.system for r in loaded] == ["vugen", "decoupled"]
    assert loaded[1].step == 100
