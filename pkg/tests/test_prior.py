import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from beamprobe.core import DomainError, TemperatureConfig, TrainingError, make_rng
from beamprobe.nn import DenseNet, mse, softmax, train_sgd, weighted_soft_ce
from beamprobe.prior import (LogitStats, PriorModel, calibrate, calibrate_rows, class_weights,
                             effective_temperature, entropy, sharpness, soft_targets,
                             standardize_logits, train_prior)
from beamprobe.synth import SceneParams, generate

from . import oracles

CLEAN = SceneParams(n_sweeps=800, samples_per_beam=128, bearing_noise_sigma=0.0,
                    peak_snr_db=30.0, beamwidth_sigma=0.7, seed=1)


@pytest.fixture(scope="module")
def clean_scene():
    return generate(CLEAN)


def tiny(seed=0):
    rng = np.random.default_rng(seed)
    net = DenseNet([6, 8, 5], rng)
    for b in net.b:
        b[:] = rng.normal(0, 0.1, size=b.shape)
    X = rng.normal(size=(12, 6))
    return net, X, rng


class TestDenseNet:
    def test_zero_weights_give_bias(self):
        net = DenseNet([4, 3, 2])
        net.b[-1][:] = [0.5, -1.0]
        np.testing.assert_array_equal(net.forward(np.zeros((1, 4)))[0], [0.5, -1.0])

    def test_counts_rows(self):
        net = DenseNet([4, 3], np.random.default_rng(0))
        net.forward(np.zeros((7, 4)))
        net.forward(np.zeros(4))
        assert net.n_forward == 8

    def test_wrong_width(self):
        with pytest.raises(DomainError):
            DenseNet([4, 3]).forward(np.zeros((1, 5)))

    def test_ce_gradient(self):
        net, X, rng = tiny()
        T = softmax(rng.normal(size=(12, 5)), axis=1)
        w = rng.uniform(0.5, 2.0, size=12)
        assert oracles.gradient_check(net, X, weighted_soft_ce, (T, w)) < 1e-4

    def test_mse_gradient(self):
        net, X, rng = tiny(1)
        Y = rng.normal(size=(12, 5))
        assert oracles.gradient_check(net, X, mse, (Y,)) < 1e-4

    def test_bytes_roundtrip(self):
        net, X, _ = tiny()
        blob = net.to_bytes(b"xyz")
        back, extra = DenseNet.from_bytes(blob)
        assert extra == b"xyz"
        assert back.to_bytes(b"xyz") == blob
        np.testing.assert_array_equal(back.forward(X), net.forward(X))
        assert blob[:4] == b"BPDN"
        assert len(blob) == 4 + 8 + 3 * 4 + 8 * (6 * 8 + 8 + 8 * 5 + 5) + 4 + 3

    def test_bad_blob(self):
        with pytest.raises(DomainError):
            DenseNet.from_bytes(b"NOPE" + bytes(20))

    def test_divergence_reports_epoch(self):
        net, X, rng = tiny()
        Y = rng.normal(size=(12, 5)) * 1e3
        with pytest.raises(TrainingError, match="epoch"), np.errstate(all="ignore"):
            train_sgd(net, X, mse, 50, 1e3, 4, rng, aux=(Y,))


class TestTraining:
    def test_learns_clean_scene(self, clean_scene):
        hist = []
        pm = train_prior(clean_scene, epochs=30, hidden=(32,), history=hist)
        pred = np.argmax(pm.logits(clean_scene.standardized()), axis=1) + 1
        assert np.mean(pred == clean_scene.oracle) >= 0.95
        assert all(b < a for a, b in zip(hist[:5], hist[1:5]))
        assert pm.net.n_forward == len(clean_scene)  # training passes are not counted

    def test_zero_epochs(self, clean_scene):
        pm = train_prior(clean_scene, epochs=0, hidden=(8,))
        assert pm.stats.sigma_train > 0 and math.isfinite(pm.stats.mu_train)
        ref = DenseNet(pm.net.sizes, make_rng(0, 101))
        np.testing.assert_array_equal(pm.net.W[0], ref.W[0])

    def test_seed_determinism(self, clean_scene):
        a = train_prior(clean_scene, epochs=2, hidden=(8,), seed=5)
        b = train_prior(clean_scene, epochs=2, hidden=(8,), seed=5)
        assert a.net.to_bytes() == b.net.to_bytes() and a.stats == b.stats

    def test_checkpoint_roundtrip(self, clean_scene, tmp_path):
        pm = train_prior(clean_scene, epochs=1, hidden=(8,))
        pm.save(tmp_path / "p.bpn")
        back = PriorModel.load(tmp_path / "p.bpn")
        assert back.stats == pm.stats
        assert (tmp_path / "p.bpn").read_bytes() == back.net.to_bytes(back.stats.to_bytes())

    def test_soft_targets_and_weights(self):
        R = np.array([[0.0, 2.0], [3.0, 1.0], [5.0, 6.0]])
        T = soft_targets(R)
        np.testing.assert_allclose(T.sum(axis=1), 1.0)
        assert np.all(np.argmax(T, axis=1) == [1, 0, 1])
        w = class_weights([2, 1, 2], 2)
        np.testing.assert_allclose(w, [0.75, 1.5, 0.75])
        assert w.mean() == pytest.approx(1.0)


class TestStandardize:
    def test_identity(self):
        z = np.array([1.0, -2.0, 3.5])
        np.testing.assert_array_equal(standardize_logits(z, LogitStats(0.0, 1.0, 0.0)), z)

    def test_constant_stays_constant(self):
        out = standardize_logits(np.full(5, 3.0), LogitStats(1.0, 2.0))
        assert np.ptp(out) == 0

    @given(hnp.arrays(float, st.integers(2, 30), elements=st.integers(-100, 100).map(float)),
           st.floats(-5, 5), st.floats(0.1, 10))
    def test_argmax_kept(self, z, mu, sd):
        assert np.argmax(standardize_logits(z, LogitStats(mu, sd))) == np.argmax(z)

    def test_bad_sigma(self):
        with pytest.raises(DomainError):
            LogitStats(0.0, 0.0)


class TestTemperature:
    def test_neutral_cases(self):
        cfg = TemperatureConfig(T0=1.5, gamma=0.0)
        assert effective_temperature(cfg.s_min, 0.7, cfg) == 1.5
        cfg0 = TemperatureConfig(T0=1.5, gamma=0.0, alpha_temp=0.0)
        for s in (0.05, 0.3, 1.0):
            assert effective_temperature(s, 0.3, cfg0) == 1.5

    def test_hand_value(self):
        cfg = TemperatureConfig(T0=1.0, s_min=0.2, alpha_temp=1.0, gamma=0.5, T_min=0.5, T_max=3.0)
        assert effective_temperature(0.4, 1.0, cfg) == pytest.approx(0.75, abs=1e-15)

    def test_bad_sharpness(self):
        with pytest.raises(DomainError):
            effective_temperature(0.0, 0.0, TemperatureConfig())

    @settings(max_examples=200)
    @given(st.floats(1e-4, 1.0), st.floats(0.0, 1.0))
    def test_within_bounds(self, s, u):
        cfg = TemperatureConfig()
        assert cfg.T_min <= effective_temperature(s, u, cfg) <= cfg.T_max


class TestEntropy:
    def test_examples(self):
        assert entropy([0, 1, 0]) == 0.0
        assert entropy([0.5, 0.25, 0.25]) == pytest.approx(1.5 * math.log(2), abs=1e-15)
        assert abs(entropy(np.full(21, 1 / 21)) - math.log(21)) < 1e-12
        assert abs(math.log(21) - 3.0445) < 1e-4

    def test_rejects(self):
        with pytest.raises(DomainError):
            entropy([1.2, -0.2])
        with pytest.raises(DomainError):
            entropy([0.5, 0.4])

    @given(hnp.arrays(float, st.integers(2, 40), elements=st.floats(-20, 20)))
    def test_bounds(self, z):
        H = entropy(softmax(z))
        assert -1e-12 <= H <= math.log(z.size) + 1e-12


class TestCalibrate:
    def test_constant_logits(self):
        c = calibrate(np.full(7, 0.3), 1.7)
        np.testing.assert_allclose(c.pmf, 1 / 7)
        assert abs(c.entropy - math.log(7)) < 1e-12

    def test_entropy_rises_with_temperature(self):
        z = np.random.default_rng(0).normal(size=21) * 2
        H = [calibrate(z, T).entropy for T in np.geomspace(0.1, 100, 40)]
        assert np.all(np.diff(H) > 0) and H[-1] < math.log(21)

    def test_non_finite(self):
        with pytest.raises(DomainError):
            calibrate([0.0, np.inf], 1.0)
        with pytest.raises(DomainError):
            calibrate([0.0, 1.0], 0.0)

    @settings(max_examples=100)
    @given(hnp.arrays(float, st.integers(2, 25), elements=st.integers(-40, 40).map(lambda v: v / 4)),
           st.floats(0.05, 20))
    def test_ranking_preserved(self, z, T):
        p = calibrate(z, T).pmf
        assert np.argmax(p) == np.argmax(z)
        i, j = np.argsort(z)[-1], np.argsort(z)[0]
        assert p[i] >= p[j]

    def test_rows_match_single(self):
        rng = np.random.default_rng(3)
        Z = rng.normal(size=(6, 9))
        u = rng.random(6)
        cfg = TemperatureConfig()
        pmf, H, s_hat, T = calibrate_rows(Z, u, cfg)
        for i in range(6):
            Ti = effective_temperature(sharpness(Z[i]), u[i], cfg)
            c = calibrate(Z[i], Ti)
            np.testing.assert_allclose(pmf[i], c.pmf, atol=1e-15)
            assert H[i] == pytest.approx(c.entropy, abs=1e-12)
            assert s_hat[i] == c.s_hat and T[i] == Ti
