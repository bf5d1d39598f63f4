import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from beamprobe.core import (Codebook, ConfigError, DomainError, PolicyConfig,
                            SweepRecord, TemperatureConfig, build_dataclass, circ_dist,
                            load_policy_config, make_rng, percentile, zscore_row)


def brute_circ(a, b, B):
    # walk both directions around the ring
    fwd = next(k for k in range(B) if (a - 1 + k) % B == b - 1)
    back = next(k for k in range(B) if (a - 1 - k) % B == b - 1)
    return min(fwd, back)


def brute_percentile(samples, p):
    xs = sorted(float(v) for v in samples)
    pos = (len(xs) - 1) * p / 100.0
    lo = math.floor(pos)
    hi = min(lo + 1, len(xs) - 1)
    return xs[lo] + (pos - lo) * (xs[hi] - xs[lo])


class TestCircDist:
    def test_examples(self):
        assert circ_dist(1, 1, 21) == 0
        assert circ_dist(1, 21, 21) == 1
        assert circ_dist(3, 14, 21) == brute_circ(3, 14, 21) == 10

    @given(st.integers(2, 64).flatmap(
        lambda B: st.tuples(st.just(B), st.integers(1, B), st.integers(1, B), st.integers(1, B))))
    def test_metric_properties(self, args):
        B, a, b, c = args
        d = circ_dist(a, b, B)
        assert d == circ_dist(b, a, B) == brute_circ(a, b, B)
        assert 0 <= d <= B // 2
        assert circ_dist(a, c, B) <= d + circ_dist(b, c, B)

    @pytest.mark.parametrize("a,b", [(0, 1), (1, 22), (-3, 2)])
    def test_out_of_range(self, a, b):
        with pytest.raises(DomainError):
            circ_dist(a, b, 21)

    def test_vectorized(self):
        a = np.arange(1, 22)
        np.testing.assert_array_equal(circ_dist(a, 1, 21),
                                      [brute_circ(int(x), 1, 21) for x in a])


class TestZscore:
    def test_examples(self):
        np.testing.assert_array_equal(zscore_row([5, 5, 5]), [0, 0, 0])
        np.testing.assert_allclose(zscore_row([0, 2]), [-1, 1], atol=1e-15)
        z = zscore_row([1, 2, 3, 4])
        ref = (np.array([1, 2, 3, 4]) - 2.5) / math.sqrt(1.25)
        np.testing.assert_allclose(z, ref, atol=1e-15)
        assert abs(z.mean()) < 1e-15 and abs(z.std() - 1) < 1e-12
        assert np.all(np.diff(z) > 0)

    def test_too_short(self):
        with pytest.raises(DomainError):
            zscore_row([1.0])

    @settings(max_examples=200)
    @given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=30),
           st.floats(0.01, 100), st.floats(-1e3, 1e3))
    def test_affine_invariance(self, v, c, d):
        v = np.asarray(v)
        if v.std() < 1e-6:
            return
        np.testing.assert_allclose(zscore_row(c * v + d), zscore_row(v), atol=1e-9)


class TestPercentile:
    def test_examples(self):
        assert percentile([4], 99.7) == 4
        assert percentile([1, 2, 3, 4, 5], 50) == 3
        assert percentile([0, 10], 20) == pytest.approx(2.0, abs=1e-15)

    def test_bounds(self):
        x = [3.0, 1.0, 7.0]
        assert percentile(x, 0) == 1.0
        assert percentile(x, 100) == 7.0

    def test_errors(self):
        with pytest.raises(DomainError):
            percentile([], 50)
        with pytest.raises(DomainError):
            percentile([1.0], 101)
        with pytest.raises(DomainError):
            percentile([1.0], -0.1)

    def test_random_vectors_match_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(1000):
            x = rng.exponential(size=rng.integers(1, 60))
            p = rng.uniform(0, 100)
            assert abs(percentile(x, p) - brute_percentile(x, p)) <= 1e-12

    def test_monotone_in_p(self):
        x = np.random.default_rng(1).normal(size=50)
        vals = [percentile(x, p) for p in np.linspace(0, 100, 101)]
        assert np.all(np.diff(vals) >= 0)


class TestConfig:
    def test_defaults_valid(self):
        PolicyConfig()
        TemperatureConfig()

    @pytest.mark.parametrize("change", [
        {"lambda_": 1.5}, {"beta": -1}, {"H_low": 3.0, "H_high": 2.0},
        {"K_min": 2, "K_mid": 2}, {"K_max": 2}, {"tau_gap": 1.2}, {"delta": -1},
        {"epsilon": 0.0}, {"alpha_hybrid": -0.1}, {"c_K": -1}, {"d_theta": -1},
    ])
    def test_policy_rejects(self, change):
        with pytest.raises(ConfigError):
            PolicyConfig(**change)

    @pytest.mark.parametrize("change", [
        {"T_min": 2.0}, {"T0": 5.0}, {"s_min": 0.0}, {"alpha_temp": -1}, {"gamma": -1},
    ])
    def test_temperature_rejects(self, change):
        with pytest.raises(ConfigError):
            TemperatureConfig(**change)

    def test_codebook_budget(self):
        with pytest.raises(ConfigError):
            PolicyConfig(K_max=4).check_codebook(3)

    def test_load_file(self, tmp_path):
        p = tmp_path / "c.toml"
        p.write_text("[policy]\nlambda = 0.25\nK_max = 5\n[temperature]\nT0 = 1.5\n")
        pol, temp = load_policy_config(p)
        assert pol.lambda_ == 0.25 and pol.K_max == 5 and temp.T0 == 1.5

    def test_unknown_key_is_error(self, tmp_path):
        p = tmp_path / "c.toml"
        p.write_text("[policy]\nlamda = 0.25\n")
        with pytest.raises(ConfigError, match="lamda"):
            load_policy_config(p)
        with pytest.raises(ConfigError):
            build_dataclass(TemperatureConfig, {"bogus": 1}, "temperature")


def test_codebook():
    cb = Codebook(21)
    assert list(cb.indices) == list(range(1, 22))
    assert cb.circ_dist(1, 21) == 1
    with pytest.raises(ConfigError):
        Codebook(1)


def test_make_rng_reproducible():
    a = make_rng(3, 1, 2).normal(size=5)
    b = make_rng(3, 1, 2).normal(size=5)
    c = make_rng(3, 2, 1).normal(size=5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


class TestSweepRecord:
    def test_needs_data(self):
        with pytest.raises(DomainError):
            SweepRecord(0, np.zeros(3))

    def test_reward_from_iq(self):
        iq = np.random.default_rng(0).exponential(size=(4, 64))
        rec = SweepRecord(0, np.zeros(3), iq_power=iq)
        assert rec.B == 4

    def test_inconsistent_rows(self):
        iq = np.random.default_rng(0).exponential(size=(4, 64))
        rec = SweepRecord(0, np.zeros(3), iq_power=iq)
        with pytest.raises(DomainError):
            SweepRecord(0, np.zeros(3), iq_power=iq, reward_row=rec.reward_row + 1e-6)

    def test_oracle_check(self):
        SweepRecord(0, np.zeros(2), reward_row=np.array([1.0, 3.0, 3.0]), oracle_beam=2)
        with pytest.raises(DomainError):
            SweepRecord(0, np.zeros(2), reward_row=np.array([1.0, 3.0, 3.0]), oracle_beam=3)
