"""Trimmed statistics, exact inversion, and the ablation statistic kinds."""

import numpy as np
import pytest

from mhforecast.errors import ConfigError, ShapeError
from mhforecast.normalization import (
    KINDS,
    NormConfig,
    NormStats,
    ablation_stats,
    batch_stats,
    denormalize,
    normalize,
    robust_stats,
    window_stats,
)


def brute_force_trimmed(channel, p):
    """Independent oracle: sort, drop k each side, population moments."""
    values = sorted(float(v) for v in channel)
    k = int(np.floor(p * len(values)))
    central = values[k : len(values) - k]
    mu = sum(central) / len(central)
    var = sum((v - mu) ** 2 for v in central) / len(central)
    return mu, var


class TestRobustStats:
    def test_worked_example(self):
        x = np.array([[1.0], [2.0], [3.0], [4.0], [100.0]])
        cfg = NormConfig(kind="sin", trim_ratio=0.2, var_epsilon=0.0)
        stats = robust_stats(x, cfg)
        assert abs(stats.mu[0] - 3.0) <= 1e-12
        assert abs(stats.sigma[0] - np.sqrt(2.0 / 3.0)) <= 1e-12
        mu, var = brute_force_trimmed(x[:, 0], 0.2)
        assert abs(stats.mu[0] - mu) <= 1e-12
        assert abs(stats.sigma[0] - np.sqrt(var)) <= 1e-12

    def test_constant_channel(self):
        cfg = NormConfig(kind="sin", trim_ratio=0.1, var_epsilon=1e-5)
        stats = robust_stats(np.full((4, 1), 7.5), cfg)
        assert stats.mu[0] == 7.5
        assert stats.sigma[0] == np.sqrt(1e-5)

    def test_zero_trim_equals_plain_moments(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(13, 3))
        stats = robust_stats(x, NormConfig(kind="sin", trim_ratio=0.0, var_epsilon=0.0))
        np.testing.assert_allclose(stats.mu, x.mean(axis=0), rtol=1e-12)
        np.testing.assert_allclose(stats.sigma, x.std(axis=0), rtol=1e-12)

    def test_instance_kind_ignores_trim(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(10, 2))
        a = robust_stats(x, NormConfig(kind="instance", trim_ratio=0.3, var_epsilon=0.0))
        b = robust_stats(x, NormConfig(kind="sin", trim_ratio=0.0, var_epsilon=0.0))
        np.testing.assert_array_equal(a.mu, b.mu)
        np.testing.assert_array_equal(a.sigma, b.sigma)

    def test_breakdown_bit_identical(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(20, 3))
        cfg = NormConfig(kind="sin", trim_ratio=0.1, var_epsilon=1e-5)  # k = 2
        base = robust_stats(x, cfg)
        contaminated = x.copy()
        for d in range(3):
            i = np.argmax(contaminated[:, d])
            contaminated[i, d] *= 1e6
            j = np.argmin(contaminated[:, d])
            contaminated[j, d] = -abs(contaminated[j, d]) * 1e6
        poked = robust_stats(contaminated, cfg)
        assert np.array_equal(base.mu, poked.mu)
        assert np.array_equal(base.sigma, poked.sigma)

    def test_scale_equivariance_with_zero_epsilon(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(17, 2))
        cfg = NormConfig(kind="sin", trim_ratio=0.1, var_epsilon=0.0)
        base = robust_stats(x, cfg)
        for alpha, beta in ((2.5, -1.0), (-3.0, 0.7), (100.0, 5.0)):
            stats = robust_stats(alpha * x + beta, cfg)
            np.testing.assert_allclose(stats.mu, alpha * base.mu + beta, rtol=1e-9, atol=1e-9)
            np.testing.assert_allclose(stats.sigma, abs(alpha) * base.sigma, rtol=1e-9)

    def test_mean_scaler(self):
        x = np.array([[1.0, -2.0], [-3.0, 4.0]])
        stats = robust_stats(x, NormConfig(kind="mean-scaler", var_epsilon=1e-5))
        np.testing.assert_array_equal(stats.mu, [0.0, 0.0])
        np.testing.assert_allclose(stats.sigma, [2.0 + 1e-5, 3.0 + 1e-5], rtol=1e-15)

    def test_identity_kind(self):
        x = np.array([[5.0], [9.0]])
        stats = robust_stats(x, NormConfig(kind="identity"))
        np.testing.assert_array_equal(normalize(x, stats), x)

    def test_trim_leaving_no_samples_is_an_error(self):
        # Unreachable through a validated NormConfig (k = floor(p*L) < L/2
        # whenever p < 0.5), so craft a hostile config to hit the guard.
        cfg = NormConfig(kind="sin", trim_ratio=0.4)
        object.__setattr__(cfg, "trim_ratio", 0.6)
        with pytest.raises(ConfigError, match="trim ratio leaves no samples"):
            robust_stats(np.ones((4, 1)), cfg)

    def test_batch_kinds_rejected(self):
        with pytest.raises(ConfigError, match="ablation_stats"):
            robust_stats(np.ones((4, 2)), NormConfig(kind="batch-stat"))

    def test_channel_permutation_commutes(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(12, 4))
        perm = rng.permutation(4)
        for kind in ("sin", "instance", "mean-scaler", "identity"):
            cfg = NormConfig(kind=kind)
            direct = robust_stats(x[:, perm], cfg)
            base = robust_stats(x, cfg)
            # numpy reductions are layout-sensitive at the last ulp, so the
            # commutation holds to float identity, not bit identity
            np.testing.assert_allclose(direct.mu, base.mu[perm], rtol=1e-14, atol=1e-15)
            np.testing.assert_allclose(direct.sigma, base.sigma[perm], rtol=1e-14)
            np.testing.assert_allclose(
                normalize(x[:, perm], direct), normalize(x, base)[:, perm], rtol=1e-12
            )


class TestNormalizeDenormalize:
    def test_centering_gives_zeros(self):
        stats = NormStats(mu=np.array([2.0, -1.0]), sigma=np.array([3.0, 0.5]))
        x = np.tile(stats.mu, (6, 1))
        np.testing.assert_array_equal(normalize(x, stats), np.zeros((6, 2)))

    def test_worked_normalization(self):
        x = np.array([[1.0], [2.0], [3.0], [4.0], [100.0]])
        cfg = NormConfig(kind="sin", trim_ratio=0.2, var_epsilon=0.0)
        stats = robust_stats(x, cfg)
        sigma = np.sqrt(2.0 / 3.0)
        expected = (x - 3.0) / sigma
        np.testing.assert_allclose(normalize(x, stats), expected, rtol=1e-12)

    def test_round_trip_every_kind(self):
        rng = np.random.default_rng(5)
        for kind in KINDS:
            cfg = NormConfig(kind=kind, trim_ratio=0.1, var_epsilon=1e-5, group_count=2)
            batch = rng.normal(size=(3, 11, 4)) * 50.0 + 10.0
            if kind in ("batch-stat", "layer-stat", "group-stat"):
                stats_list = ablation_stats(batch, cfg)
            else:
                stats_list = [robust_stats(w, cfg) for w in batch]
            for w, stats in zip(batch, stats_list):
                back = denormalize(normalize(w, stats), stats)
                np.testing.assert_allclose(back, w, atol=1e-9)

    def test_denormalize_zeros_returns_mu(self):
        stats = NormStats(mu=np.array([4.0, -2.0]), sigma=np.array([1.5, 2.5]))
        out = denormalize(np.zeros((7, 2)), stats)
        np.testing.assert_array_equal(out, np.tile(stats.mu, (7, 1)))

    def test_denormalize_any_horizon_length(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(10, 2))
        stats = robust_stats(x, NormConfig())
        y = rng.normal(size=(25, 2))  # horizon longer than the context
        np.testing.assert_allclose(denormalize(normalize(y, stats), stats), y, atol=1e-9)

    def test_dimension_mismatch(self):
        stats = NormStats(mu=np.zeros(2), sigma=np.ones(2))
        with pytest.raises(ShapeError):
            normalize(np.ones((4, 3)), stats)
        with pytest.raises(ShapeError):
            denormalize(np.ones((4, 3)), stats)

    def test_renormalized_window_has_unit_trimmed_stats(self):
        rng = np.random.default_rng(7)
        cfg = NormConfig(kind="sin", trim_ratio=0.1, var_epsilon=0.0)
        x = rng.normal(size=(30, 3)) * 9.0 + 4.0
        stats = robust_stats(x, cfg)
        again = robust_stats(normalize(x, stats), cfg)
        assert np.all(np.abs(again.mu) < 1e-9)
        assert np.all(np.abs(again.sigma - 1.0) < 1e-9)


class TestAblationStats:
    def test_degenerate_batch_equals_instance_stats(self):
        rng = np.random.default_rng(8)
        w = rng.normal(size=(9, 3))
        batch = np.stack([w, w, w])
        cfg = NormConfig(kind="batch-stat", var_epsilon=1e-5)
        stats = ablation_stats(batch, cfg)
        plain = robust_stats(w, NormConfig(kind="sin", trim_ratio=0.0, var_epsilon=1e-5))
        for s in stats:
            np.testing.assert_allclose(s.mu, plain.mu, rtol=1e-12)
            np.testing.assert_allclose(s.sigma, plain.sigma, rtol=1e-12)

    def test_layer_stat_pools_channels(self):
        w = np.array([[0.0, 2.0], [0.0, 2.0]])
        cfg = NormConfig(kind="layer-stat", var_epsilon=1e-5)
        (stats,) = ablation_stats(w[None], cfg)
        np.testing.assert_allclose(stats.mu, [1.0, 1.0], rtol=1e-15)
        np.testing.assert_allclose(stats.sigma, np.sqrt(1.0 + 1e-5), rtol=1e-15)

    def test_group_count_equal_to_channels_reduces_to_instance(self):
        rng = np.random.default_rng(9)
        batch = rng.normal(size=(2, 8, 4))
        cfg = NormConfig(kind="group-stat", group_count=4, var_epsilon=1e-5)
        stats = ablation_stats(batch, cfg)
        for w, s in zip(batch, stats):
            plain = robust_stats(w, NormConfig(kind="sin", trim_ratio=0.0, var_epsilon=1e-5))
            np.testing.assert_allclose(s.mu, plain.mu, rtol=1e-12)
            np.testing.assert_allclose(s.sigma, plain.sigma, rtol=1e-12)

    def test_group_count_must_divide_channels(self):
        with pytest.raises(ConfigError, match="does not divide"):
            ablation_stats(np.ones((1, 4, 3)), NormConfig(kind="group-stat", group_count=2))

    def test_batch_stats_matches_per_window_path(self):
        rng = np.random.default_rng(10)
        batch = rng.normal(size=(6, 14, 3))
        cfg = NormConfig(kind="sin", trim_ratio=0.1, var_epsilon=1e-5)
        mu, sigma = batch_stats(batch, cfg)
        for i, w in enumerate(batch):
            stats = robust_stats(w, cfg)
            np.testing.assert_array_equal(mu[i], stats.mu)
            np.testing.assert_array_equal(sigma[i], stats.sigma)

    def test_window_stats_handles_batch_kinds(self):
        rng = np.random.default_rng(11)
        w = rng.normal(size=(10, 2))
        stats = window_stats(w, NormConfig(kind="layer-stat"))
        (expected,) = ablation_stats(w[None], NormConfig(kind="layer-stat"))
        np.testing.assert_array_equal(stats.mu, expected.mu)


class TestNormConfig:
    def test_validation(self):
        with pytest.raises(ConfigError):
            NormConfig(kind="zscore")
        with pytest.raises(ConfigError):
            NormConfig(trim_ratio=0.5)
        with pytest.raises(ConfigError):
            NormConfig(trim_ratio=-0.1)
        with pytest.raises(ConfigError):
            NormConfig(var_epsilon=-1e-9)
        with pytest.raises(ConfigError):
            NormConfig(group_count=0)

    def test_zero_epsilon_allowed(self):
        assert NormConfig(var_epsilon=0.0).var_epsilon == 0.0
