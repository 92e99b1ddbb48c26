"""Metric oracles: brute-force distortion, CDF-integral CRPS, CKA, FLOPs."""

import numpy as np
import pytest

from mhforecast.errors import ConfigError, DataError, ShapeError
from mhforecast.metrics import (
    count_flops,
    count_flops_instrumented,
    covariance_matrix,
    crps_empirical,
    crps_sum,
    distortion,
    distortion_stack,
    linear_cka,
    measure_latency,
)
from mhforecast.model import ForecastSet, ModelConfig, init_params
from mhforecast.normalization import NormConfig, NormStats


def brute_force_distortion(hyps, targets):
    """Independent double loop over windows and hypotheses."""
    total = 0.0
    for i in range(len(targets)):
        best = None
        for k in range(hyps.shape[1]):
            d = 0.0
            for t in range(targets.shape[1]):
                for c in range(targets.shape[2]):
                    d += (hyps[i, k, t, c] - targets[i, t, c]) ** 2
            d = d**0.5
            best = d if best is None else min(best, d)
        total += best
    return total / len(targets)


def crps_by_integration(samples, y):
    """Exact integral of (F(z) - 1{y <= z})^2 dz for the empirical CDF."""
    s = np.sort(np.asarray(samples, dtype=np.float64))
    points = np.unique(np.concatenate([s, [y]]))
    total = 0.0
    for a, b in zip(points[:-1], points[1:]):
        f = np.sum(s <= a) / s.size
        ind = 1.0 if y <= a else 0.0
        total += (f - ind) ** 2 * (b - a)
    return total


def wrap_forecasts(hyps, confs=None):
    n, k = hyps.shape[:2]
    stats = NormStats(np.zeros(hyps.shape[3]), np.ones(hyps.shape[3]))
    out = []
    for i in range(n):
        c = np.full(k, 0.5) if confs is None else confs[i]
        out.append(
            ForecastSet(list(hyps[i]), c, np.zeros(hyps.shape[2:]), stats)
        )
    return out


class TestDistortion:
    def test_min_over_hypotheses(self):
        target = np.zeros((1, 2, 1))
        far = np.full((2, 1), 5.0 / np.sqrt(2.0))
        near = np.full((2, 1), 3.0 / np.sqrt(2.0))
        hyps = np.stack([far, near])[None]
        assert distortion_stack(hyps, target) == pytest.approx(3.0, rel=1e-12)

    def test_exact_hypothesis_contributes_zero(self):
        rng = np.random.default_rng(0)
        y = rng.normal(size=(1, 3, 2))
        hyps = np.stack([y[0] + 10.0, y[0]])[None]
        assert distortion_stack(hyps, y) == 0.0

    def test_single_hypothesis_is_mean_euclidean_error(self):
        rng = np.random.default_rng(1)
        y = rng.normal(size=(4, 3, 2))
        hyps = rng.normal(size=(4, 1, 3, 2))
        expected = np.mean([np.linalg.norm(hyps[i, 0] - y[i]) for i in range(4)])
        assert distortion_stack(hyps, y) == pytest.approx(expected, rel=1e-12)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            n = int(rng.integers(1, 9))
            k = int(rng.integers(1, 17))
            h = int(rng.integers(1, 7))
            d = int(rng.integers(1, 7))
            hyps = rng.normal(size=(n, k, h, d))
            y = rng.normal(size=(n, h, d))
            assert distortion_stack(hyps, y) == pytest.approx(
                brute_force_distortion(hyps, y), abs=1e-10
            )

    def test_adding_a_hypothesis_never_increases(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            hyps = rng.normal(size=(5, 3, 4, 2))
            extra = rng.normal(size=(5, 1, 4, 2))
            y = rng.normal(size=(5, 4, 2))
            assert distortion_stack(np.concatenate([hyps, extra], axis=1), y) <= (
                distortion_stack(hyps, y) + 1e-12
            )

    def test_accepts_forecast_sets(self):
        rng = np.random.default_rng(4)
        hyps = rng.normal(size=(3, 2, 4, 2))
        y = rng.normal(size=(3, 4, 2))
        assert distortion(wrap_forecasts(hyps), y) == pytest.approx(
            distortion_stack(hyps, y), rel=1e-15
        )

    def test_empty_is_an_error(self):
        with pytest.raises(DataError):
            distortion_stack(np.zeros((0, 2, 3, 1)), np.zeros((0, 3, 1)))


class TestCrpsEmpirical:
    def test_worked_example(self):
        assert crps_empirical([0.0, 2.0], 1.0) == pytest.approx(0.5, abs=1e-12)

    def test_all_samples_equal_target(self):
        assert crps_empirical([3.0, 3.0, 3.0], 3.0) == 0.0

    def test_single_sample_is_absolute_error(self):
        assert crps_empirical([5.0], 2.5) == pytest.approx(2.5, abs=1e-12)

    def test_matches_cdf_integration(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            samples = rng.normal(size=3) * 2.0
            y = float(rng.normal())
            assert crps_empirical(samples, y) == pytest.approx(
                crps_by_integration(samples, y), abs=1e-6
            )

    def test_non_negative(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            k = int(rng.integers(1, 9))
            assert crps_empirical(rng.normal(size=k), float(rng.normal())) >= 0.0

    def test_translation_invariance(self):
        rng = np.random.default_rng(7)
        s = rng.normal(size=5)
        y = 0.3
        for c in (1.0, -4.2, 100.0):
            assert crps_empirical(s + c, y + c) == pytest.approx(
                crps_empirical(s, y), abs=1e-12
            )

    def test_weighted_uniform_matches_unweighted(self):
        s = np.array([0.0, 1.0, 4.0])
        assert crps_empirical(s, 2.0, weights=[1.0, 1.0, 1.0]) == pytest.approx(
            crps_empirical(s, 2.0), abs=1e-12
        )


def naive_crps_sum(hyps, targets, normalized):
    """Second, independent loop implementation of the channel-summed score."""
    n, k, h, d = hyps.shape
    out = 0.0
    for i in range(n):
        paths = [[sum(hyps[i, j, t, c] for c in range(d)) for t in range(h)] for j in range(k)]
        tpath = [sum(targets[i, t, c] for c in range(d)) for t in range(h)]
        window = 0.0
        for t in range(h):
            samples = [paths[j][t] for j in range(k)]
            term1 = sum(abs(s - tpath[t]) for s in samples) / k
            term2 = sum(abs(a - b) for a in samples for b in samples) / (2 * k * k)
            window += term1 - term2
        if normalized:
            window /= sum(abs(v) for v in tpath) + 1e-12
        out += window
    return out / n


class TestCrpsSum:
    def test_perfect_forecasts(self):
        rng = np.random.default_rng(8)
        y = rng.normal(size=(3, 4, 2))
        hyps = np.repeat(y[:, None], 2, axis=1)
        assert crps_sum(hyps, y) == 0.0

    def test_single_step_single_channel_reduction(self):
        hyps = np.array([[[[0.0]], [[2.0]]]])  # N=1, K=2, H=1, D=1
        y = np.array([[[1.0]]])
        assert crps_sum(hyps, y) == pytest.approx(0.5 / (1.0 + 1e-12), rel=1e-9)
        assert crps_sum(hyps, y, normalized=False) == pytest.approx(0.5, abs=1e-12)

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(9)
        for _ in range(5):
            hyps = rng.normal(size=(2, 3, 2, 2)) * 3.0
            y = rng.normal(size=(2, 2, 2)) * 3.0
            for normalized in (True, False):
                assert crps_sum(hyps, y, normalized=normalized) == pytest.approx(
                    naive_crps_sum(hyps, y, normalized), abs=1e-10
                )

    def test_channel_permutation_invariance(self):
        rng = np.random.default_rng(10)
        hyps = rng.normal(size=(3, 2, 4, 3))
        y = rng.normal(size=(3, 4, 3))
        perm = [2, 0, 1]
        assert crps_sum(hyps[:, :, :, perm], y[:, :, perm]) == pytest.approx(
            crps_sum(hyps, y), rel=1e-12
        )
        assert distortion_stack(hyps[:, :, :, perm], y[:, :, perm]) == pytest.approx(
            distortion_stack(hyps, y), rel=1e-12
        )

    def test_confidence_weighting_changes_the_score(self):
        rng = np.random.default_rng(11)
        hyps = rng.normal(size=(2, 3, 4, 1))
        y = rng.normal(size=(2, 4, 1))
        confs = np.tile(np.array([0.9, 0.05, 0.05]), (2, 1))
        unweighted = crps_sum(wrap_forecasts(hyps), y)
        weighted = crps_sum(wrap_forecasts(hyps, confs), y, confidence_weighted=True)
        assert weighted != unweighted


class TestCovariance:
    def test_identical_channels_rank_one(self):
        rng = np.random.default_rng(12)
        col = rng.normal(size=100)
        cov = covariance_matrix(np.stack([col, col], axis=1))
        assert cov[0, 0] == pytest.approx(cov[0, 1], rel=1e-12)
        assert cov[0, 0] == pytest.approx(np.var(col, ddof=1), rel=1e-12)

    def test_independent_channels_near_diagonal(self):
        rng = np.random.default_rng(13)
        x = rng.standard_normal((10000, 3))
        cov = covariance_matrix(x)
        off = cov[~np.eye(3, dtype=bool)]
        assert np.all(np.abs(off) < 0.05)

    def test_positive_semidefinite(self):
        rng = np.random.default_rng(14)
        cov = covariance_matrix(rng.normal(size=(50, 4)))
        assert np.allclose(cov, cov.T)
        assert np.linalg.eigvalsh(cov).min() >= -1e-10

    def test_needs_two_rows(self):
        with pytest.raises(DataError):
            covariance_matrix(np.ones((1, 3)))


class TestLinearCka:
    def test_self_similarity_is_one(self):
        rng = np.random.default_rng(15)
        a = rng.normal(size=(40, 6))
        assert linear_cka(a, a) == pytest.approx(1.0, rel=1e-12)

    def test_rotation_invariance(self):
        rng = np.random.default_rng(16)
        a = rng.normal(size=(40, 6))
        q, _ = np.linalg.qr(rng.normal(size=(6, 6)))
        assert linear_cka(a, a @ q) == pytest.approx(1.0, rel=1e-9)

    def test_isotropic_scaling_invariance(self):
        rng = np.random.default_rng(17)
        a = rng.normal(size=(30, 4))
        b = rng.normal(size=(30, 5))
        assert linear_cka(a * 7.3, b) == pytest.approx(linear_cka(a, b), rel=1e-12)

    def test_symmetry(self):
        rng = np.random.default_rng(18)
        a = rng.normal(size=(30, 4))
        b = rng.normal(size=(30, 5))
        assert linear_cka(a, b) == pytest.approx(linear_cka(b, a), rel=1e-12)

    def test_independent_features_near_zero(self):
        rng = np.random.default_rng(19)
        a = rng.normal(size=(1000, 8))
        b = rng.normal(size=(1000, 8))
        assert linear_cka(a, b) < 0.1

    def test_zero_variance_is_an_error(self):
        with pytest.raises(DataError):
            linear_cka(np.ones((10, 2)), np.random.default_rng(20).normal(size=(10, 2)))

    def test_in_unit_interval(self):
        rng = np.random.default_rng(21)
        for _ in range(10):
            v = linear_cka(rng.normal(size=(15, 3)), rng.normal(size=(15, 4)))
            assert 0.0 <= v <= 1.0


class TestFlops:
    def test_documented_encoder_term(self):
        cfg = ModelConfig(L=24, H=24, D=2, K=1, head_hidden=1)
        encoder = cfg.D * (2 * cfg.H * cfg.L + cfg.H)
        assert encoder == 2352

    def test_matches_instrumented_counter(self):
        rng = np.random.default_rng(22)
        for _ in range(10):
            cfg = ModelConfig(
                L=int(rng.integers(1, 30)),
                H=int(rng.integers(1, 30)),
                D=int(rng.integers(1, 5)),
                K=int(rng.integers(1, 17)),
                head_hidden=int(rng.integers(1, 80)),
            )
            assert count_flops(cfg) == count_flops_instrumented(cfg)

    def test_head_terms_scale_linearly_with_k(self):
        base = ModelConfig(L=12, H=12, D=2, K=4, head_hidden=16)
        double = ModelConfig(L=12, H=12, D=2, K=8, head_hidden=16)
        per_head = (count_flops(double) - count_flops(base)) // 4
        encoder_and_norm = count_flops(base) - 4 * per_head
        assert count_flops(double) == encoder_and_norm + 8 * per_head


class TestLatency:
    def test_requires_three_repeats(self):
        cfg = ModelConfig(L=4, H=4, D=1, K=1, head_hidden=2)
        with pytest.raises(ConfigError):
            measure_latency(init_params(cfg), cfg, np.zeros((2, 4, 1)), repeats=2)

    def test_returns_positive_seconds(self):
        cfg = ModelConfig(L=8, H=8, D=1, K=2, head_hidden=4)
        batch = np.random.default_rng(23).normal(size=(16, 8, 1))
        t = measure_latency(init_params(cfg), cfg, batch, repeats=3)
        assert t > 0.0
