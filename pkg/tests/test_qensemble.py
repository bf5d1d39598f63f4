import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from beamprobe.core import ConfigError, DomainError
from beamprobe.nn import DenseNet
from beamprobe.prior import train_prior
from beamprobe.qensemble import (QEnsemble, ensemble_stats, estimate, estimate_rows,
                                 train_ensemble)
from beamprobe.synth import SceneParams, generate

from . import oracles

SCENE = SceneParams(n_sweeps=600, samples_per_beam=128, bearing_noise_sigma=0.0,
                    peak_snr_db=30.0, beamwidth_sigma=0.7, seed=2)


@pytest.fixture(scope="module")
def scene():
    return generate(SCENE)


@pytest.fixture(scope="module")
def prior(scene):
    return train_prior(scene, epochs=20, hidden=(32,))


def fixed_member(out):
    """A 1-input network whose output is ``out`` for any input."""
    net = DenseNet([1, len(out)])
    net.b[0][:] = out
    return net


class TestStats:
    def test_hand_example(self):
        eps = 1e-8
        ens = QEnsemble([fixed_member([0.0, 2.0]), fixed_member([2.0, 0.0])])
        est = estimate(ens, np.zeros(1), eps)
        np.testing.assert_array_equal(est.mu, [1.0, 1.0])
        np.testing.assert_array_equal(est.tau, [1.0, 1.0])
        np.testing.assert_array_equal(est.sigma_hat, [1 / (1 + eps)] * 2)

    def test_identical_members(self):
        ens = QEnsemble([fixed_member([0.3, -1.0, 2.0])] * 3)
        est = estimate(ens, np.zeros(1))
        np.testing.assert_array_equal(est.mu, [0.3, -1.0, 2.0])
        np.testing.assert_array_equal(est.sigma_hat, 0.0)

    def test_random_members_match_loop(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            M, B = int(rng.integers(2, 7)), int(rng.integers(2, 22))
            out = rng.normal(size=(M, B))
            mu, tau, sig = ensemble_stats(out)
            omu, otau, osig = oracles.ensemble_stats(out.tolist())
            np.testing.assert_allclose(mu, omu, rtol=0, atol=1e-12)
            np.testing.assert_allclose(tau, otau, rtol=0, atol=1e-12)
            np.testing.assert_allclose(sig, osig, rtol=0, atol=1e-12)

    @settings(max_examples=200)
    @given(hnp.arrays(float, st.tuples(st.integers(2, 6), st.integers(1, 12)),
                      elements=st.floats(-10, 10)), st.data())
    def test_duplicate_within_spread_never_increases_tau(self, out, data):
        # a duplicate of member k lowers tau(b) iff M (x_kb - mu_b)^2 <= (M + 1) tau_b^2
        M = out.shape[0]
        k = data.draw(st.integers(0, M - 1))
        mu, tau, sig = ensemble_stats(out)
        _, tau2, _ = ensemble_stats(np.vstack([out, out[k:k + 1]]))
        inside = M * (out[k] - mu) ** 2 <= (M + 1) * tau ** 2
        assert np.all(tau2[inside] <= tau[inside] + 1e-12)
        nearest = np.argmin(np.abs(out - mu), axis=0)
        _, tau3, _ = ensemble_stats(np.concatenate([out, out[nearest, np.arange(out.shape[1])][None]]))
        assert np.all(tau3 <= tau + 1e-12)
        assert np.all((sig >= 0) & (sig <= 1))

    def test_duplicate_of_outlier_can_raise_tau(self):
        out = np.array([[0.0], [1.0], [1.0]])
        _, tau, _ = ensemble_stats(out)
        _, tau2, _ = ensemble_stats(np.vstack([out, out[:1]]))
        assert tau2[0] > tau[0]

    def test_duplicating_every_member_is_neutral(self):
        out = np.random.default_rng(1).normal(size=(4, 6))
        np.testing.assert_allclose(ensemble_stats(np.vstack([out, out]))[1], ensemble_stats(out)[1],
                                   atol=1e-12)

    def test_needs_two_members(self):
        with pytest.raises(ConfigError):
            QEnsemble([fixed_member([1.0, 2.0])])

    def test_shape_mismatch(self):
        with pytest.raises(DomainError):
            QEnsemble([fixed_member([1.0, 2.0]), fixed_member([1.0, 2.0, 3.0])])
        ens = QEnsemble([fixed_member([1.0, 2.0])] * 2)
        with pytest.raises(DomainError):
            estimate(ens, np.zeros(3))
        with pytest.raises(DomainError):
            estimate_rows(ens, np.zeros((2, 3)))


class TestTraining:
    def test_losses_fall(self, scene, prior):
        hist = []
        train_ensemble(scene, prior, M=2, epochs=5, hidden=(32,), history=hist)
        assert len(hist) == 2
        for curve in hist:
            assert all(b < a for a, b in zip(curve, curve[1:]))

    def test_identical_without_bootstrap(self, scene, prior):
        ens = train_ensemble(scene, prior, M=3, epochs=2, hidden=(16,), bootstrap=False, seed=4)
        _, tau, sig = estimate_rows(ens, scene.standardized()[:50])
        assert np.all(tau == 0) and np.all(sig == 0)

    def test_members_differ_with_bootstrap(self, scene, prior):
        ens = train_ensemble(scene, prior, M=3, epochs=2, hidden=(16,))
        _, tau, _ = estimate_rows(ens, scene.standardized()[:50])
        assert tau.max() > 0
        assert len(set(ens.seeds)) == 3

    @staticmethod
    def _reward_only_vs_prior(scene, prior):
        ens = train_ensemble(scene, prior, M=2, epochs=20, hidden=(32,), alpha_hybrid=1.0)
        X = scene.standardized()
        mu, _, _ = estimate_rows(ens, X)
        q_top1 = np.mean(np.argmax(mu, axis=1) + 1 == scene.oracle)
        p_top1 = np.mean(np.argmax(prior.logits(X), axis=1) + 1 == scene.oracle)
        return q_top1, p_top1

    def test_reward_only_targets_track_prior(self, scene, prior):
        q_top1, p_top1 = self._reward_only_vs_prior(scene, prior)
        assert q_top1 >= 0.9 and q_top1 >= p_top1 - 0.05

    @pytest.mark.xfail(strict=False, reason="class-weighted prior is often the stronger argmax "
                                            "predictor on clean scenes; see decision ledger")
    def test_reward_only_targets_beat_prior(self, scene, prior):
        q_top1, p_top1 = self._reward_only_vs_prior(scene, prior)
        assert q_top1 >= p_top1

    def test_prior_counter_untouched(self, scene, prior):
        before = prior.net.n_forward
        train_ensemble(scene, prior, M=2, epochs=1, hidden=(8,))
        assert prior.net.n_forward == before

    def test_passes_counted_per_member(self, scene, prior):
        ens = train_ensemble(scene, prior, M=4, epochs=1, hidden=(8,))
        assert ens.n_forward == 0
        estimate_rows(ens, scene.standardized()[:10])
        assert ens.n_forward == 40

    def test_deterministic(self, scene, prior):
        x = scene.standardized()[7]
        ens = train_ensemble(scene, prior, M=2, epochs=1, hidden=(8,))
        a, b = estimate(ens, x), estimate(ens, x)
        np.testing.assert_array_equal(a.mu, b.mu)
        np.testing.assert_array_equal(a.sigma_hat, b.sigma_hat)

    def test_checkpoint_roundtrip(self, scene, prior, tmp_path):
        ens = train_ensemble(scene, prior, M=3, epochs=1, hidden=(8,), seed=9)
        ens.save(tmp_path / "e.bpq")
        raw = (tmp_path / "e.bpq").read_bytes()
        assert raw[:4] == b"BPQE"
        back = QEnsemble.load(tmp_path / "e.bpq")
        assert back.seeds == ens.seeds and back.alpha_hybrid == ens.alpha_hybrid
        back.save(tmp_path / "f.bpq")
        assert (tmp_path / "f.bpq").read_bytes() == raw
        X = scene.standardized()[:5]
        np.testing.assert_array_equal(back.predict_all(X), ens.predict_all(X))

    def test_bad_checkpoint(self, tmp_path):
        (tmp_path / "x.bpq").write_bytes(b"XXXX")
        with pytest.raises(DomainError):
            QEnsemble.load(tmp_path / "x.bpq")

    def test_m_below_two(self, scene, prior):
        with pytest.raises(ConfigError):
            train_ensemble(scene, prior, M=1)
