import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats

from relaxmarl import autodiff as ad
from relaxmarl.estimators import (
    EstimatorConfig,
    EstimatorConfigError,
    TemperatureSchedule,
    anneal_temperature,
    conditional_gumbel,
    gst_perturbations,
    gst_sample,
    grmc_sample,
    gumbel_from_uniform,
    make_estimator,
    one_hot,
    sample_gumbel,
    stgs_sample,
)
from relaxmarl.oracle import estimator_stats, softmax

ALL_KINDS = [make_estimator("STGS1"), make_estimator("STGST", tau=0.3),
             make_estimator("TAGS", horizon=100), make_estimator("GRMCK", K=5),
             make_estimator("GST")]


class FixedUniform:
    """Stand-in generator whose uniforms are all ``u``."""

    def __init__(self, u):
        self.u = u

    def random(self, shape):
        return np.full(shape, self.u)


def tv_distance(indices, probs):
    freq = np.bincount(indices, minlength=len(probs)) / len(indices)
    return 0.5 * np.abs(freq - probs).sum()


class TestGumbel:
    def test_closed_forms(self):
        assert gumbel_from_uniform(np.exp(-1.0)) == pytest.approx(0.0, abs=1e-15)
        assert gumbel_from_uniform(np.exp(-np.e)) == pytest.approx(-1.0, abs=1e-15)

    def test_clamped_extremes_are_finite(self):
        g = gumbel_from_uniform(np.array([0.0, 1.0]))
        assert np.all(np.isfinite(g))

    def test_mean_is_euler_mascheroni(self):
        g = sample_gumbel(10 ** 6, np.random.default_rng(0))
        assert abs(g.mean() - np.euler_gamma) < 0.005


class TestStgs:
    def test_pinned_noise(self):
        ra = stgs_sample(np.array([1.0, 2.0]), 1.0, FixedUniform(np.exp(-1.0)))
        np.testing.assert_array_equal(ra.hard, [0.0, 1.0])
        e = np.exp([1.0, 2.0])
        np.testing.assert_allclose(ra.surrogate.data, e / e.sum(), rtol=1e-12)
        assert ra.surrogate.data[0] == pytest.approx(0.2689, abs=1e-4)
        np.testing.assert_array_equal(ra.output().data, ra.hard)

    def test_uniform_logits_frequency(self):
        ra = stgs_sample(np.zeros((10 ** 5, 2)), 1.0, np.random.default_rng(1))
        assert abs(ra.index.mean() - 0.5) < 0.01

    def test_hard_distribution_is_temperature_free(self):
        zeta = np.tile([0.5, 1.0, -0.3], (10 ** 5, 1))
        hot = stgs_sample(zeta, 1.0, np.random.default_rng(2)).index
        cold = stgs_sample(zeta, 0.1, np.random.default_rng(3)).index
        f1 = np.bincount(hot, minlength=3) / hot.size
        f2 = np.bincount(cold, minlength=3) / cold.size
        assert 0.5 * np.abs(f1 - f2).sum() < 0.01

    def test_invalid_temperature(self):
        with pytest.raises(ad.InvalidTemperatureError):
            stgs_sample(np.zeros(3), 0.0, np.random.default_rng(0))


class TestAnneal:
    sched = TemperatureSchedule("exponential", 2.0, 0.5, 100)

    def test_boundaries(self):
        assert anneal_temperature(self.sched, 0) == 2.0
        assert anneal_temperature(self.sched, 100) == pytest.approx(0.5)
        assert anneal_temperature(self.sched, 10_000) == pytest.approx(0.5)

    def test_midpoint(self):
        assert anneal_temperature(self.sched, 50) == pytest.approx(1.0, rel=1e-12)

    @given(st.floats(0.05, 5), st.floats(0.05, 5), st.integers(1, 1000))
    def test_positive_and_monotone(self, a, b, horizon):
        s = TemperatureSchedule("exponential", max(a, b), min(a, b), horizon)
        taus = [anneal_temperature(s, t) for t in range(0, 2 * horizon, max(1, horizon // 20))]
        assert all(t > 0 for t in taus)
        assert all(x >= y - 1e-12 for x, y in zip(taus, taus[1:]))

    def test_constant(self):
        assert anneal_temperature(TemperatureSchedule("constant", 0.7, 0.7, 5), 3) == 0.7


class TestConditionalGumbel:
    def test_argmax_is_conditioned_index(self):
        rng = np.random.default_rng(4)
        zeta = rng.uniform(-3, 3, (10 ** 4, 5))
        idx = rng.integers(0, 5, 10 ** 4)
        v = conditional_gumbel(zeta, idx, rng)
        np.testing.assert_array_equal(v.argmax(axis=1), idx)

    def test_selected_coordinate_closed_form(self):
        v = conditional_gumbel(np.zeros(2), np.int64(0), np.random.default_rng(9))
        e = np.random.default_rng(9).exponential(size=2)
        assert v[0] == pytest.approx(-np.log(e[0]) + np.log(2.0), rel=1e-12)
        assert v[1] == pytest.approx(-np.log(e[1] + e[0] / 2.0), rel=1e-12)

    def test_mixture_matches_unconditional(self):
        rng = np.random.default_rng(5)
        zeta = np.array([0.5, 1.0, -0.3, 0.0])
        n = 10 ** 5
        idx = rng.choice(4, size=n, p=softmax(zeta))
        v = conditional_gumbel(np.tile(zeta, (n, 1)), idx, rng)
        u = zeta + sample_gumbel((n, 4), rng)
        for j in range(4):
            assert stats.ks_2samp(v[:, j], u[:, j]).pvalue > 0.01

    def test_k_draws_leading_axis(self):
        v = conditional_gumbel(np.array([0.1, 0.2, 0.3]), np.int64(2), np.random.default_rng(0), k=7)
        assert v.shape == (7, 3)
        assert np.all(v.argmax(axis=1) == 2)


class TestGrmc:
    zeta = np.array([0.5, 1.0, -0.3])
    f = np.array([1.0, 0.0, -1.0])

    def test_forward_equals_hard(self):
        ra = grmc_sample(np.tile(self.zeta, (50, 1)), 1.0, 10, np.random.default_rng(0))
        np.testing.assert_array_equal(ra.output().data, ra.hard)
        np.testing.assert_allclose(ra.surrogate.data.sum(axis=1), 1.0, atol=1e-12)
        assert ra.noise.shape == (10, 50, 3)

    def test_config_errors(self):
        with pytest.raises(EstimatorConfigError):
            grmc_sample(self.zeta, 1.0, 0, np.random.default_rng(0))
        with pytest.raises(ad.InvalidTemperatureError):
            grmc_sample(self.zeta, -1.0, 3, np.random.default_rng(0))

    def test_k1_matches_stgs_mean(self):
        a = estimator_stats(make_estimator("STGS1"), self.zeta, self.f, 10 ** 5, np.random.default_rng(1))
        b = estimator_stats(make_estimator("GRMCK", K=1), self.zeta, self.f, 10 ** 5,
                            np.random.default_rng(2))
        tol = 3 * np.hypot(a.se_mean, b.se_mean)
        assert np.all(np.abs(a.mean_grad - b.mean_grad) <= tol)

    def test_variance_non_increasing_in_k(self):
        var = [estimator_stats(make_estimator("GRMCK", K=k), self.zeta, self.f, 10 ** 5,
                               np.random.default_rng(10 + k)).per_coord_variance for k in (1, 10, 50)]
        assert np.all(var[1] <= var[0]) and np.all(var[2] <= var[1])

    def test_large_k_mean_stabilises(self):
        s50 = estimator_stats(make_estimator("GRMCK", K=50), self.zeta, self.f, 20_000,
                              np.random.default_rng(3))
        s200 = estimator_stats(make_estimator("GRMCK", K=200), self.zeta, self.f, 20_000,
                               np.random.default_rng(4))
        tol = 2 * np.hypot(s50.se_mean, s200.se_mean)
        assert np.all(np.abs(s50.mean_grad - s200.mean_grad) < tol)


class TestGst:
    def test_selected_argmax_has_zero_m1(self):
        m1, _ = gst_perturbations(np.array([1.0, 3.0]), np.array([0.0, 1.0]), 1.0)
        np.testing.assert_array_equal(m1, [0.0, 0.0])

    def test_hand_example_non_argmax(self):
        zeta = np.array([1.0, 3.0])
        m1, m2 = gst_perturbations(zeta, np.array([1.0, 0.0]), 1.0)
        np.testing.assert_array_equal(m1, [2.0, 0.0])
        np.testing.assert_array_equal(m2, [0.0, -1.0])
        np.testing.assert_array_equal(zeta + m1 + m2, [3.0, 2.0])

    def test_hand_example_gap_already_met(self):
        m1, m2 = gst_perturbations(np.array([1.0, 3.0]), np.array([0.0, 1.0]), 1.0)
        np.testing.assert_array_equal(m1, [0.0, 0.0])
        np.testing.assert_array_equal(m2, [0.0, 0.0])

    def test_consistency_and_gap_over_random_logits(self):
        rng = np.random.default_rng(6)
        zeta = rng.uniform(-3, 3, (10 ** 4, 6))
        ra = gst_sample(zeta, 1.0, 1.0, rng)
        pert = zeta + ra.noise[0]
        np.testing.assert_array_equal(pert.argmax(axis=1), ra.index)
        np.testing.assert_array_equal(ra.surrogate.data.argmax(axis=1), ra.index)
        others = np.where(ra.hard.astype(bool), -np.inf, pert)
        assert np.all(others <= zeta.max(axis=1, keepdims=True) - 1.0 + 1e-12)

    def test_uniform_frequency(self):
        ra = gst_sample(np.zeros((10 ** 5, 2)), 1.0, 1.0, np.random.default_rng(7))
        assert abs(ra.index.mean() - 0.5) < 0.01

    @settings(max_examples=300, deadline=None)
    @given(arrays(np.float64, st.integers(2, 8), elements=st.floats(-5, 5)),
           st.floats(0.01, 3.0), st.data())
    def test_gap_property(self, zeta, kappa, data):
        i = data.draw(st.integers(0, len(zeta) - 1))
        a = one_hot(np.int64(i), len(zeta))
        m1, m2 = gst_perturbations(zeta, a, kappa)
        pert = zeta + m1 + m2
        top = zeta.max()
        assert pert[i] == pytest.approx(top, abs=1e-12)
        if zeta[i] == top:
            assert np.all(m1 == 0)
        gap = top - np.delete(zeta, i).max()
        assert np.all(pert[i] - np.delete(pert, i) >= min(kappa, max(gap, 0.0)) - 1e-12)
        assert np.all(np.delete(pert, i) <= top - kappa + 1e-12)

    def test_invalid_kappa(self):
        with pytest.raises(EstimatorConfigError):
            gst_sample(np.zeros(3), 1.0, 0.0, np.random.default_rng(0))


@pytest.mark.parametrize("config", ALL_KINDS, ids=lambda c: c.label)
def test_forward_pass_is_exact_categorical(config):
    rng = np.random.default_rng(8)
    zeta = np.array([0.2, -1.0, 1.3, 0.0, 0.5, -0.4])
    ra = config.relax(np.tile(zeta, (10 ** 5, 1)), rng)
    assert tv_distance(ra.index, softmax(zeta)) < 0.01
    np.testing.assert_array_equal(ra.hard.sum(axis=1), 1.0)
    np.testing.assert_allclose(ra.surrogate.data.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(ra.surrogate.data > 0)


def test_sample_hard_consumes_rng_identically():
    zeta = np.array([0.3, -0.2, 0.9])
    draws = []
    for cfg in ALL_KINDS:
        rng = np.random.default_rng(11)
        draws.append([int(cfg.sample_hard(zeta, rng)) for _ in range(50)])
    assert all(d == draws[0] for d in draws)


class TestConfig:
    def test_stgs1_forces_unit_temperature(self):
        assert EstimatorConfig("STGS1", tau=0.3).tau == 1.0

    def test_unknown_kind(self):
        with pytest.raises(EstimatorConfigError):
            EstimatorConfig("REBAR")

    def test_tags_needs_schedule(self):
        with pytest.raises(EstimatorConfigError):
            EstimatorConfig("TAGS")

    def test_defaults(self):
        assert make_estimator("GRMCK").K == 10
        assert make_estimator("GST").kappa == 1.0
        tags = make_estimator("TAGS", horizon=10)
        assert tags.temperature(0) == 2.0 and tags.temperature(10) == pytest.approx(0.3)
        assert math.isclose(tags.with_horizon(20).temperature(10), 2.0 * (0.15) ** 0.5)
