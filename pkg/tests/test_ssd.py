import numpy as np
import pytest

from oodkit import (
    EmbeddingMatrix,
    GaussianStats,
    NumericalError,
    ParameterError,
    default_epsilon,
    fit_gaussian,
    load_gaussian_stats,
    mahalanobis_score,
    mahalanobis_score_batch,
    save_gaussian_stats,
)
from oodkit.errors import DataError

from oracles import mahalanobis_explicit


def test_fit_hand_example():
    train = EmbeddingMatrix(np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0]]))
    stats = fit_gaussian(train, epsilon=0.0)
    assert np.array_equal(stats.mu, [1.0, 1.0])
    assert np.array_equal(stats.sigma, [[4.0 / 3.0, 0.0], [0.0, 4.0 / 3.0]])


def test_fit_repeated_value():
    train = EmbeddingMatrix(np.tile([2.0, -1.0], (5, 1)))
    stats = fit_gaussian(train, epsilon=1e-3)
    assert np.array_equal(stats.sigma, np.zeros((2, 2)))
    assert np.allclose(stats.factor, np.sqrt(1e-3) * np.eye(2), atol=1e-15)


def test_fit_needs_two_samples():
    with pytest.raises(ParameterError):
        fit_gaussian(EmbeddingMatrix(np.ones((1, 3))))


def test_singular_covariance_without_regularization():
    train = EmbeddingMatrix(np.tile([1.0, 2.0], (4, 1)))
    with pytest.raises(NumericalError, match="epsilon"):
        fit_gaussian(train, epsilon=0.0)


def test_default_epsilon_rule():
    sigma = np.diag([2.0, 4.0])
    assert default_epsilon(sigma) == 1e-3 * 6.0 / 2.0


def test_identity_covariance_equals_euclidean():
    stats = GaussianStats.from_moments(np.zeros(2), np.eye(2), 0.0)
    assert abs(mahalanobis_score(np.array([3.0, 4.0]), stats) - 5.0) <= 1e-12


def test_one_dimensional_example():
    stats = GaussianStats.from_moments(np.array([1.0]), np.array([[4.0]]), 0.0)
    assert abs(mahalanobis_score(np.array([5.0]), stats) - 2.0) <= 1e-12


def test_anisotropic_example():
    stats = GaussianStats.from_moments(np.zeros(2), np.diag([4.0, 1.0]), 0.0)
    assert abs(mahalanobis_score(np.array([2.0, 1.0]), stats) - np.sqrt(2.0)) <= 1e-12


def test_score_at_mean_is_exactly_zero():
    rng = np.random.default_rng(4)
    train = EmbeddingMatrix(rng.normal(size=(30, 5)))
    stats = fit_gaussian(train)
    assert mahalanobis_score(stats.mu, stats) == 0.0


def test_matches_explicit_inverse_oracle():
    rng = np.random.default_rng(13)
    for d in (2, 4, 8):
        a = rng.normal(size=(d, d))
        sigma = a @ a.T + 0.5 * np.eye(d)
        mu = rng.normal(size=d)
        stats = GaussianStats.from_moments(mu, sigma, 0.0)
        for _ in range(20):
            q = rng.normal(size=d)
            got = mahalanobis_score(q, stats)
            ref = mahalanobis_explicit(q, mu, sigma, 0.0)
            assert abs(got - ref) <= 1e-9 * max(ref, 1.0)


def test_batch_matches_singles():
    rng = np.random.default_rng(6)
    train = EmbeddingMatrix(rng.normal(size=(50, 4)))
    stats = fit_gaussian(train)
    queries = rng.normal(size=(1000, 4))
    batch = mahalanobis_score_batch(queries, stats)
    singles = np.array([mahalanobis_score(q, stats) for q in queries])
    assert np.abs(batch - singles).max() <= 1e-12
    assert mahalanobis_score_batch(np.empty((0, 4)), stats).shape == (0,)


def test_batch_hand_values():
    stats = GaussianStats.from_moments(np.zeros(2), np.eye(2), 0.0)
    got = mahalanobis_score_batch(np.array([[3.0, 4.0], [0.0, 0.0]]), stats)
    assert np.allclose(got, [5.0, 0.0], atol=1e-12)


def test_dimension_mismatch():
    stats = GaussianStats.from_moments(np.zeros(2), np.eye(2), 0.0)
    with pytest.raises(ParameterError):
        mahalanobis_score(np.ones(3), stats)


def test_asymmetric_sigma_rejected():
    sigma = np.array([[1.0, 0.5], [0.2, 1.0]])
    with pytest.raises(DataError, match="symmetric"):
        GaussianStats.from_moments(np.zeros(2), sigma, 0.0)


def test_affine_invariance():
    rng = np.random.default_rng(17)
    for d in (2, 4, 8):
        train = rng.normal(size=(200, d))
        queries = rng.normal(size=(20, d)) * 2.0
        a = rng.normal(size=(d, d)) + 2.0 * np.eye(d)
        base = fit_gaussian(EmbeddingMatrix(train), epsilon=0.0)
        mapped = fit_gaussian(EmbeddingMatrix(train @ a.T), epsilon=0.0)
        s0 = mahalanobis_score_batch(queries, base)
        s1 = mahalanobis_score_batch(queries @ a.T, mapped)
        assert np.abs(s0 - s1).max() <= 1e-6 * np.abs(s0).max()


def test_translation_leaves_ranking_unchanged():
    rng = np.random.default_rng(23)
    train = rng.normal(size=(100, 3))
    queries = rng.normal(size=(50, 3)) * 3.0
    shift = rng.normal(size=3) * 10.0
    s0 = mahalanobis_score_batch(queries, fit_gaussian(EmbeddingMatrix(train)))
    s1 = mahalanobis_score_batch(queries + shift, fit_gaussian(EmbeddingMatrix(train + shift)))
    assert np.array_equal(np.argsort(s0, kind="stable"), np.argsort(s1, kind="stable"))


def test_persistence_round_trip(tmp_path):
    rng = np.random.default_rng(31)
    train = EmbeddingMatrix(rng.normal(size=(40, 6)))
    stats = fit_gaussian(train)
    path = tmp_path / "s.ssdm"
    save_gaussian_stats(stats, path)
    back = load_gaussian_stats(path)
    assert back.epsilon == stats.epsilon
    assert np.array_equal(back.mu, stats.mu)
    assert np.array_equal(back.sigma, stats.sigma)
    queries = rng.normal(size=(25, 6))
    assert np.array_equal(
        mahalanobis_score_batch(queries, back), mahalanobis_score_batch(queries, stats)
    )
    save_gaussian_stats(back, tmp_path / "s2.ssdm")
    assert (tmp_path / "s.ssdm").read_bytes() == (tmp_path / "s2.ssdm").read_bytes()
