import math
import warnings

import numpy as np
import pytest

from xenad import fusion as F
from xenad.core import ScoreSeries


def reference_filter(observations):
    """Textbook Kalman filter with explicit inverse and Joseph-form covariance."""
    A = np.zeros((5, 5))
    for i in range(4):
        A[i, i] = 1.0
        A[4, i] = 0.25
    Hm = np.hstack([np.eye(4), np.zeros((4, 1))])
    x = np.append(observations[0], np.mean(observations[0]))
    P = 0.1 * np.eye(5)
    out = [x.copy()]
    for y in observations[1:]:
        x = A @ x
        P = A @ P @ A.T + 0.1 * np.eye(5)
        K = P @ Hm.T @ np.linalg.inv(Hm @ P @ Hm.T + np.eye(4))
        x = x + K @ (y - Hm @ x)
        I_KH = np.eye(5) - K @ Hm
        P = I_KH @ P @ I_KH.T + K @ K.T
        out.append(x.copy())
    return np.array(out)


def run_filter(observations):
    state = F.kalman_init(observations[0])
    out = [state.x]
    for y in observations[1:]:
        state = F.kalman_step(state, y)
        out.append(state.x)
    return np.array(out)


class TestKalman:
    def test_matches_dense_reference(self, rng):
        obs = rng.normal(size=(1000, 4)) * rng.uniform(0.1, 5, size=4)
        np.testing.assert_allclose(run_filter(obs), reference_filter(obs), rtol=0, atol=1e-10)

    def test_constant_observation_converges(self):
        c = 1.7
        out = run_filter(np.full((101, 4), c))
        assert abs(out[-1, 4] - c) < 1e-3

    def test_init_state(self):
        st = F.kalman_init([1.0, 2.0, 3.0, 6.0])
        np.testing.assert_array_equal(st.x, [1, 2, 3, 6, 3])
        np.testing.assert_array_equal(st.P, 0.1 * np.eye(5))

    def test_covariance_stays_symmetric_psd(self, rng):
        st = F.kalman_init(rng.normal(size=4))
        for _ in range(200):
            st = F.kalman_step(st, rng.normal(size=4))
        assert np.array_equal(st.P, st.P.T)
        assert np.linalg.eigvalsh(st.P).min() > 0

    def test_rejects_bad_observations(self):
        st = F.kalman_init(np.zeros(4))
        with pytest.raises(ValueError):
            F.kalman_step(st, np.zeros(3))
        with pytest.raises(ValueError, match="non-finite"):
            F.kalman_step(st, [0, 0, np.nan, 0])


class TestNormalizer:
    def test_lognormal_moments(self):
        m, s = 0.3, 0.4
        x = np.random.default_rng(7).lognormal(m, s, size=10_000)
        st = F.fit_normalizer(x)
        mu = math.exp(m + s * s / 2)
        sd = math.sqrt((math.exp(s * s) - 1) * math.exp(2 * m + s * s))
        assert abs(st.mu - mu) / mu < 0.02
        assert abs(st.sigma - sd) / sd < 0.05
        q95 = math.exp(m + s * 1.6448536269514722)
        assert abs(st.tau - q95) / q95 < 0.05
        # the support shift keeps every sample at least one STD above zero
        assert st.shift == pytest.approx(max(0.0, x.std() - x.min()), rel=1e-12)

    def test_negative_scores_are_shifted(self):
        x = np.random.default_rng(1).normal(-30.0, 1.5, size=5000)
        st = F.fit_normalizer(x)
        assert st.shift > 30.0
        assert abs(st.mu + 30.0) < 0.1 and abs(st.sigma - 1.5) / 1.5 < 0.05

    def test_translation_equivariant_when_shifted(self):
        x = np.random.default_rng(3).normal(-30.0, 1.5, size=2000)
        a, b = F.fit_normalizer(x), F.fit_normalizer(x + 5.0)
        assert b.mu == pytest.approx(a.mu + 5.0, abs=1e-9)
        assert b.sigma == pytest.approx(a.sigma, rel=1e-9)
        assert b.tau == pytest.approx(a.tau + 5.0, abs=1e-9)

    def test_no_mass_below_support(self):
        x = np.random.default_rng(2).lognormal(0.0, 0.5, size=10_000)
        kde = F.LogKDE(x, F._shift_for(x))
        neg = np.linspace(-50, 0, 2_001)
        neg = neg[neg < 0]
        assert np.trapezoid(kde.pdf(neg), neg) < 1e-9
        pos = np.geomspace(1e-6, 60, 20_001)
        assert np.trapezoid(kde.pdf(pos), pos) == pytest.approx(1.0, abs=1e-3)

    def test_degenerate_samples_warn(self):
        with pytest.warns(RuntimeWarning, match="floored"):
            st = F.fit_normalizer(np.full(40, 2.5))
        assert st.mu == 2.5 and st.sigma == F.SIGMA_FLOOR

    def test_requires_enough_samples(self):
        with pytest.raises(ValueError, match="at least 30"):
            F.fit_normalizer(np.ones(10))

    def test_threshold_average(self):
        stats = [F.NormalizationStats(0, 1, 2), F.NormalizationStats(1, 2, 5),
                 F.NormalizationStats(-3, 1, -1), F.NormalizationStats(0, 4, 4)]
        assert F.ensemble_threshold(stats) == pytest.approx((2 + 2 + 2 + 1) / 4)

    def test_stats_round_trip(self, tmp_path):
        stats = {e: F.NormalizationStats(0.1 * i, 1.0 + i / 3, 2.0, 0.5, 0.01, 0.95) for i, e in enumerate(F.EXPERTS)}
        F.save_stats(stats, tmp_path / "stats.ini")
        assert F.load_stats(tmp_path / "stats.ini") == stats


UNIT = [F.NormalizationStats(0.0, 1.0, 1.0)] * 4


def four(T, valid=(0, 0, 0, 0), value=0.0):
    return [ScoreSeries("v", np.full(T, value), vf) for vf in valid]


class TestFuse:
    def test_prefix_takes_normal_mean(self):
        series = four(10, valid=(4, 3, 2, 2), value=5.0)
        stats = [F.NormalizationStats(mu, 1.0, 1.0) for mu in (1.0, 2.0, 3.0, 4.0)]
        res = F.fuse(series, stats)
        assert res.observations[0].tolist() == [0, 0, 0, 0]
        assert res.observations[4].tolist() == [4, 3, 2, 1]
        assert res.series.valid_from == 4

    def test_immediate_filters_from_frame_one(self, rng):
        obs = rng.normal(size=(20, 4))
        series = [ScoreSeries("v", obs[:, k], 0) for k in range(4)]
        np.testing.assert_allclose(F.fuse(series, UNIT).states, run_filter(obs), atol=1e-12)

    def test_deferred_reinitializes_until_all_valid(self, rng):
        obs = rng.normal(size=(20, 4))
        series = [ScoreSeries("v", obs[:, k], vf) for k, vf in enumerate((4, 3, 2, 2))]
        res = F.fuse(series, UNIT, mode="deferred")
        o = res.observations
        for t in range(5):
            np.testing.assert_array_equal(res.states[t], F.kalman_init(o[t]).x)
        np.testing.assert_allclose(res.states[4:], run_filter(o[4:]), atol=1e-12)

    def test_rejects_mismatched_lengths(self):
        with pytest.raises(ValueError, match="lengths differ"):
            F.fuse(four(5)[:3] + four(6)[:1], UNIT)
        with pytest.raises(ValueError, match="mode"):
            F.fuse(four(5), UNIT, mode="later")


class TestClassifier:
    def test_scene_dominated_is_ego(self):
        x = np.zeros((50, 5))
        x[20:25, 0] = 5.0
        assert F.classify_video(x) == "ego"

    def test_trajectory_dominated_is_non_ego(self):
        x = np.zeros((50, 5))
        x[20:25, 3] = 5.0
        assert F.classify_video(x) == "non-ego"

    def test_tie_goes_to_non_ego(self):
        assert F.classify_video(np.ones((10, 5))) == "non-ego"

    def test_uses_top_fraction_only(self):
        x = np.zeros((100, 5))
        x[:, 2] = 1.0  # steady interaction level
        x[:10, 0] = 3.0  # short strong scene burst in the top 10 frames
        assert F.classify_video(x) == "ego"
        assert F.classify_video(x, top_frac=0.5) == "non-ego"
