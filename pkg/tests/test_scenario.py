import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cfuad import scenario
from cfuad.scenario import ConfigError, SystemConfig


def se3(std, n):
    return 3 * std / math.sqrt(n)


class TestPathLoss:
    def test_reference_points(self):
        assert scenario.path_loss_db(10, 1.0) == pytest.approx(55.40, abs=1e-12)
        assert scenario.path_loss_db(1, 1.0) == pytest.approx(32.40, abs=1e-12)
        # oracle: 32.4 + 23*2 + 20*log10(1.9) evaluated with math
        oracle = 32.40 + 46.0 + 20 * math.log10(1.9)
        assert oracle == pytest.approx(83.975072019, abs=1e-9)
        assert scenario.path_loss_db(100, 1.9) == pytest.approx(oracle, abs=1e-12)

    @pytest.mark.parametrize("d, f", [(0, 1.0), (-1, 1.0), (10, 0), (10, -2)])
    def test_domain(self, d, f):
        with pytest.raises(ValueError):
            scenario.path_loss_db(d, f)

    @given(st.floats(0.5, 5e3), st.floats(0.5, 5e3), st.floats(0.1, 100))
    def test_monotone_in_distance(self, d1, d2, f):
        if d1 < d2:
            assert scenario.path_loss_db(d1, f) < scenario.path_loss_db(d2, f)

    @given(st.floats(0.1, 100), st.floats(0.1, 100))
    def test_monotone_in_frequency(self, f1, f2):
        if f1 < f2:
            assert scenario.path_loss_db(50.0, f1) < scenario.path_loss_db(50.0, f2)


class TestLargeScaleCoeff:
    def test_examples(self):
        assert scenario.large_scale_coeff(80, 0, 5.9) == pytest.approx(1e-8, rel=1e-12)
        assert scenario.large_scale_coeff(80, 1, 5.9) == pytest.approx(3.890e-8, abs=1e-11)
        assert scenario.large_scale_coeff(80, 1, 5.9) == pytest.approx(10 ** 0.59 / 1e8, rel=1e-12)
        assert scenario.large_scale_coeff(0, 0, 0) == 1.0

    @given(st.floats(-50, 200), st.floats(-6, 6), st.floats(0, 12))
    def test_positive(self, pl, s, sig):
        assert scenario.large_scale_coeff(pl, s, sig) > 0


class TestConfig:
    def test_defaults_mirror_table(self):
        c = SystemConfig()
        assert (c.num_aps, c.num_users, c.pilot_len, c.activity_prob) == (20, 200, 40, 0.1)
        assert (c.area_side_m, c.carrier_ghz, c.shadow_intensity) == (1000.0, 1.9, 5.9)
        assert (c.tx_power_mw, c.noise_dbm, c.batch_size, c.num_epochs) == (200.0, -109.0, 256, 10)

    def test_snr_normalization(self):
        c = SystemConfig()
        assert c.snr == pytest.approx(200 / 10 ** (-10.9), rel=1e-12)

    @pytest.mark.parametrize("kw", [dict(num_aps=0), dict(num_users=0), dict(activity_prob=1.5),
                                    dict(activity_prob=-0.1), dict(area_side_m=0),
                                    dict(carrier_ghz=0), dict(batch_size=0),
                                    dict(feature_mode="phase")])
    def test_invariants(self, kw):
        with pytest.raises(ConfigError):
            SystemConfig(**kw)

    def test_file_round_trip(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("num_aps = 10  # fewer APs\nnum_users=50\nactivity_prob = 0.2\n")
        c = SystemConfig.from_file(p)
        assert (c.num_aps, c.num_users, c.activity_prob, c.pilot_len) == (10, 50, 0.2, 40)

    def test_unknown_key_named(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("num_aps = 10\nbogus_key = 3\n")
        with pytest.raises(ConfigError, match="bogus_key"):
            SystemConfig.from_file(p)

    def test_digest_depends_on_values(self):
        assert SystemConfig().digest() == SystemConfig().digest()
        assert SystemConfig().digest() != SystemConfig(num_aps=21).digest()


class TestSampling:
    def test_deployment_deterministic(self):
        c = SystemConfig(num_aps=5, num_users=7)
        d1 = scenario.sample_deployment(c, np.random.default_rng(3))
        d2 = scenario.sample_deployment(c, np.random.default_rng(3))
        np.testing.assert_array_equal(d1.ap_positions, d2.ap_positions)
        np.testing.assert_array_equal(d1.user_positions, d2.user_positions)

    def test_deployment_in_square_and_uniform(self):
        c = SystemConfig(area_side_m=100.0, num_aps=1, num_users=100_000)
        d = scenario.sample_deployment(c, np.random.default_rng(0))
        assert d.user_positions.min() >= 0 and d.user_positions.max() <= 100.0
        n = d.user_positions.size
        std = 100.0 / math.sqrt(12)
        assert abs(d.user_positions.mean() - 50.0) < se3(std, n)
        assert np.all(d.distances() >= scenario.MIN_DISTANCE_M)

    def test_large_scale_no_shadowing_fixed_distance(self):
        c = SystemConfig(shadow_intensity=0.0, carrier_ghz=1.9)
        aps = np.array([[0.0, 0.0]])
        ang = np.linspace(0, np.pi / 2, 10)
        users = 100.0 * np.c_[np.cos(ang), np.sin(ang)]
        ls = scenario.sample_large_scale(scenario.Deployment(aps, users), c, np.random.default_rng(1))
        expected = 10 ** (-(32.40 + 46.0 + 20 * math.log10(1.9)) / 10)
        np.testing.assert_allclose(ls.beta, expected, rtol=1e-12)

    def test_shadow_draws_standard_normal(self):
        c = SystemConfig(num_aps=100, num_users=1000)
        dep = scenario.sample_deployment(c, np.random.default_rng(2))
        ls = scenario.sample_large_scale(dep, c, np.random.default_rng(3))
        s = ls.shadow_draws
        n = s.size
        assert abs(s.var() - 1.0) < se3(math.sqrt(2.0), n)
        assert np.all(ls.beta > 0) and np.all(np.isfinite(ls.beta))

    def test_beta_decreases_with_distance(self):
        c = SystemConfig()
        aps = np.zeros((1, 2))
        users = np.array([[10.0, 0.0], [20.0, 0.0], [300.0, 0.0]])
        ls = scenario.sample_large_scale(scenario.Deployment(aps, users),
                                         c.replace(shadow_intensity=0.0), np.random.default_rng(0))
        assert ls.beta[0, 0] > ls.beta[0, 1] > ls.beta[0, 2]

    def test_close_users_resampled(self):
        c = SystemConfig(area_side_m=3.0, num_aps=4, num_users=200)
        dep = scenario.sample_deployment(c, np.random.default_rng(5))
        assert np.all(dep.distances() >= scenario.MIN_DISTANCE_M)

    def test_coincident_deployment_rejected(self):
        dep = scenario.Deployment(np.zeros((1, 2)), np.zeros((1, 2)))
        with pytest.raises(ValueError):
            scenario.sample_large_scale(dep, SystemConfig(), np.random.default_rng(0))

    def test_activity_extremes(self):
        rng = np.random.default_rng(0)
        assert not scenario.sample_activity(200, 0.0, rng).any()
        assert scenario.sample_activity(200, 1.0, rng).all()
        with pytest.raises(ValueError):
            scenario.sample_activity(10, 1.2, rng)

    def test_activity_rate(self):
        rng = np.random.default_rng(4)
        counts = np.array([scenario.sample_activity(200, 0.1, rng).sum() for _ in range(10_000)])
        assert abs(counts.mean() - 20.0) < se3(math.sqrt(200 * 0.1 * 0.9), 10_000)
        assert set(np.unique(scenario.sample_activity(200, 0.1, rng))) <= {0, 1}
