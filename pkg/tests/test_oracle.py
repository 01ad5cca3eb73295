import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from relaxmarl.estimators import make_estimator
from relaxmarl.oracle import (
    CSV_COLUMNS,
    EnumerationLimitError,
    estimator_stats,
    exact_gradient,
    expected_objective,
    rao_blackwell_report,
    stats_to_csv,
)

ZETA = np.array([0.5, 1.0, -0.3])
F = np.array([1.0, 0.0, -1.0])


def fd_expected(zeta, f, h=1e-5):
    out = np.zeros_like(zeta)
    for j in range(len(zeta)):
        zp, zm = zeta.copy(), zeta.copy()
        zp[j] += h
        zm[j] -= h
        out[j] = (expected_objective(zp, f) - expected_objective(zm, f)) / (2 * h)
    return out


class TestExactGradient:
    def test_two_outcome_example(self):
        np.testing.assert_allclose(exact_gradient([0.0, 0.0], [1.0, 0.0]), [0.25, -0.25], atol=1e-15)

    def test_constant_objective(self):
        np.testing.assert_allclose(exact_gradient([0.3, -1.0, 2.0], [4.0, 4.0, 4.0]), 0.0, atol=1e-15)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        zeta = rng.normal(size=5)
        f = rng.normal(size=5)
        fd = fd_expected(zeta, f)
        assert np.max(np.abs(exact_gradient(zeta, f) - fd) / np.abs(fd)) < 1e-8

    def test_enumeration_limit(self):
        with pytest.raises(EnumerationLimitError):
            exact_gradient(np.zeros(21), np.zeros(21))

    @settings(max_examples=200, deadline=None)
    @given(st.integers(2, 8).flatmap(lambda n: st.tuples(
        arrays(np.float64, n, elements=st.floats(-5, 5)),
        arrays(np.float64, n, elements=st.floats(-5, 5)))),
        st.floats(-20, 20), st.randoms(use_true_random=False))
    def test_invariants(self, zf, c, rnd):
        zeta, f = zf
        g = exact_gradient(zeta, f)
        assert abs(g.sum()) < 1e-12
        np.testing.assert_allclose(exact_gradient(zeta + c, f), g, atol=1e-12)
        perm = list(range(len(zeta)))
        rnd.shuffle(perm)
        np.testing.assert_allclose(exact_gradient(zeta[perm], f[perm]), g[perm], atol=1e-12)


class TestEstimatorStats:
    def test_rerun_is_bit_identical(self):
        cfg = make_estimator("GRMCK", K=3)
        a = estimator_stats(cfg, ZETA, F, 1000, np.random.default_rng(42))
        b = estimator_stats(cfg, ZETA, F, 1000, np.random.default_rng(42))
        assert a.mean_grad.tobytes() == b.mean_grad.tobytes()
        assert a.per_coord_variance.tobytes() == b.per_coord_variance.tobytes()
        assert a.mse_vs_oracle == b.mse_vs_oracle

    def test_chunking_does_not_change_moments(self):
        cfg = make_estimator("STGS1")
        whole = estimator_stats(cfg, ZETA, F, 4000, np.random.default_rng(1), chunk=4000)
        parts = estimator_stats(cfg, ZETA, F, 4000, np.random.default_rng(1), chunk=1000)
        np.testing.assert_allclose(whole.mean_grad, parts.mean_grad, atol=1e-12)
        np.testing.assert_allclose(whole.per_coord_variance, parts.per_coord_variance, rtol=1e-10)

    def test_lower_temperature_lowers_bias(self):
        hot = estimator_stats(make_estimator("STGS1"), ZETA, F, 200_000, np.random.default_rng(2))
        cold = estimator_stats(make_estimator("STGST", tau=0.1), ZETA, F, 200_000,
                               np.random.default_rng(3))
        assert hot.bias_norm - cold.bias_norm > 3 * np.hypot(hot.se_bias_norm, cold.se_bias_norm)

    def test_mse_at_least_squared_bias(self):
        s = estimator_stats(make_estimator("GST"), ZETA, F, 50_000, np.random.default_rng(4))
        assert s.mse_vs_oracle >= s.bias_norm ** 2 - 3 * s.se_mse
        assert np.all(s.per_coord_variance >= 0)

    def test_requires_enough_samples(self):
        with pytest.raises(ValueError):
            estimator_stats(make_estimator("STGS1"), ZETA, F, 10, np.random.default_rng(0))


class TestRaoBlackwell:
    def test_rows_sorted_and_checks_hold(self):
        rep = rao_blackwell_report(ZETA, F, 1.0, [50, 1, 10], 100_000, np.random.default_rng(5))
        assert [r.K for r in rep.rows] == [1, 10, 50]
        assert all(ok for _, ok in rep.mse_checks())
        assert all(ok for _, ok in rep.mean_checks())
        k1, k50 = rep.rows[0], rep.rows[-1]
        assert k50.mse_vs_oracle <= k1.mse_vs_oracle + 3 * np.hypot(k50.se_mse, k1.se_mse)

    def test_degenerate_logits(self):
        rep = rao_blackwell_report([10.0, 0.0, 0.0], F, 1.0, [1, 10], 20_000, np.random.default_rng(6))
        assert all(s.mse_vs_oracle < 1e-3 for s in rep.all_stats())

    def test_empty_k_list(self):
        with pytest.raises(ValueError):
            rao_blackwell_report(ZETA, F, 1.0, [], 1000, np.random.default_rng(0))

    def test_csv_schema(self):
        rep = rao_blackwell_report(ZETA, F, 0.5, [2], 1000, np.random.default_rng(7))
        text = rep.to_csv("# config: test\n")
        body = [line for line in text.splitlines() if not line.startswith("#")]
        rows = list(csv.DictReader(io.StringIO("\n".join(body))))
        assert tuple(rows[0].keys()) == CSV_COLUMNS
        assert len(rows) == 2 * 3
        assert {r["estimator"] for r in rows} == {"STGST", "GRMC2"}
        assert stats_to_csv(rep.all_stats()) .count("\n") == len(rows) + 2
