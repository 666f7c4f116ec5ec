"""G-PLDA estimation and scoring: closed forms, integration oracle, invariances."""

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import norm

from plda_adapt.dataset import EmbeddingSet, center
from plda_adapt.errors import InsufficientDataError, InvalidInputError
from plda_adapt.gplda import GPldaModel, gplda_llr, score_pairs, train_gplda
from plda_adapt.synth import DomainSpec, gen_gplda


def labeled_set(x, speakers):
    return EmbeddingSet(ids=[f"u{i}" for i in range(len(x))], X=x, speakers=speakers)


class TestModelValidation:
    def test_rejects_indefinite_between(self):
        with pytest.raises(InvalidInputError, match="phi_b"):
            GPldaModel(mu=np.zeros(2), phi_b=np.diag([1.0, -1.0]), phi_w=np.eye(2))

    def test_rejects_semidefinite_within(self):
        with pytest.raises(InvalidInputError, match="phi_w"):
            GPldaModel(mu=np.zeros(2), phi_b=np.eye(2), phi_w=np.diag([1.0, 0.0]))

    def test_dim_consistency(self):
        with pytest.raises(InvalidInputError):
            GPldaModel(mu=np.zeros(3), phi_b=np.eye(2), phi_w=np.eye(2))

    def test_json_roundtrip(self, tmp_path):
        m = GPldaModel(mu=np.array([1.0, -2.0]), phi_b=np.diag([2.0, 1.0]), phi_w=np.eye(2))
        path = tmp_path / "m.json"
        m.save(path, extra={"config_hash": "abc"})
        again = GPldaModel.load(path)
        np.testing.assert_array_equal(again.mu, m.mu)
        np.testing.assert_array_equal(again.phi_b, m.phi_b)
        np.testing.assert_array_equal(again.phi_w, m.phi_w)


class TestTrain:
    def test_identical_utterances_floor_within(self):
        x = np.repeat(np.array([[1.0, 0.0], [0.0, 2.0], [3.0, 3.0]]), 4, axis=0)
        speakers = [s for s in "abc" for _ in range(4)]
        m = train_gplda(labeled_set(x, speakers))
        # zero within-scatter collapses to the positive-definite floor
        vals = np.linalg.eigvalsh(m.phi_w)
        assert vals[0] > 0
        assert vals[-1] <= 1e-6

    def test_translation_invariance(self):
        rng = np.random.default_rng(51)
        x = rng.normal(size=(80, 3))
        speakers = [f"s{i % 8}" for i in range(80)]
        shift = np.array([10.0, -5.0, 2.0])
        m0 = train_gplda(labeled_set(x, speakers))
        m1 = train_gplda(labeled_set(x + shift, speakers))
        np.testing.assert_allclose(m1.mu, m0.mu + shift, atol=1e-10)
        np.testing.assert_allclose(m1.phi_b, m0.phi_b, atol=1e-10)
        np.testing.assert_allclose(m1.phi_w, m0.phi_w, atol=1e-10)

    def test_generative_recovery(self):
        # oracle: sample from known covariances, recover within 10% per entry
        phi_b = np.diag([2.0, 1.0])
        phi_w = np.eye(2)
        spec = DomainSpec(dim=2, n_speakers=500, utts_per_speaker=10, seed=902, phi_b=phi_b, phi_w=phi_w)
        m = train_gplda(gen_gplda(spec))
        for rec, true in ((m.phi_b, phi_b), (m.phi_w, phi_w)):
            tol = 0.1 * np.sqrt(np.outer(np.diag(true), np.diag(true)))
            assert np.all(np.abs(rec - true) <= tol)

    def test_requires_multi_utterance_speaker(self):
        x = np.eye(3)
        with pytest.raises(InsufficientDataError, match="unestimable"):
            train_gplda(labeled_set(x, ["a", "b", "c"]))

    def test_requires_two_speakers(self):
        with pytest.raises(InsufficientDataError, match="2 speakers"):
            train_gplda(labeled_set(np.ones((4, 2)), ["a"] * 4))


class TestLlr:
    def test_zero_between_gives_zero_llr(self):
        m = GPldaModel(mu=np.zeros(2), phi_b=np.zeros((2, 2)), phi_w=np.eye(2))
        rng = np.random.default_rng(57)
        for _ in range(10):
            e, t = rng.normal(size=2), rng.normal(size=2)
            assert gplda_llr(m, e, t) == pytest.approx(0.0, abs=1e-12)

    def test_1d_closed_form(self):
        m = GPldaModel(mu=np.zeros(1), phi_b=np.eye(1), phi_w=np.eye(1))
        assert gplda_llr(m, np.zeros(1), np.zeros(1)) == pytest.approx(-0.5 * np.log(0.75), abs=1e-12)

    def test_1d_numerical_integration_oracle(self):
        b, w = 1.3, 0.7
        m = GPldaModel(mu=np.zeros(1), phi_b=[[b]], phi_w=[[w]])
        e, t = 0.4, -0.9

        def marginal(v):
            val, _ = quad(lambda h: norm.pdf(v, h, np.sqrt(w)) * norm.pdf(h, 0, np.sqrt(b)), -12, 12)
            return val

        joint, _ = quad(
            lambda h: norm.pdf(e, h, np.sqrt(w)) * norm.pdf(t, h, np.sqrt(w)) * norm.pdf(h, 0, np.sqrt(b)),
            -12,
            12,
        )
        expected = np.log(joint) - np.log(marginal(e)) - np.log(marginal(t))
        assert gplda_llr(m, [e], [t]) == pytest.approx(expected, abs=1e-9)

    def test_symmetry(self):
        rng = np.random.default_rng(59)
        a = rng.normal(size=(3, 3))
        m = GPldaModel(mu=rng.normal(size=3), phi_b=a @ a.T, phi_w=np.eye(3))
        for _ in range(20):
            e, t = rng.normal(size=3), rng.normal(size=3)
            assert gplda_llr(m, e, t) == pytest.approx(gplda_llr(m, t, e), abs=1e-10)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(61)
        a = rng.normal(size=(4, 4))
        m = GPldaModel(mu=rng.normal(size=4), phi_b=a @ a.T, phi_w=np.eye(4) + 0.1 * a @ a.T)
        x = rng.normal(size=(12, 4))
        ei = rng.integers(0, 12, size=30)
        ti = rng.integers(0, 12, size=30)
        batch = score_pairs(m, x, ei, ti)
        singles = [gplda_llr(m, x[i], x[j]) for i, j in zip(ei, ti)]
        np.testing.assert_allclose(batch, singles, atol=1e-10)

    def test_conjugation_invariance(self):
        # consistent invertible remapping of model and embeddings leaves scores alone
        from plda_adapt.adapt import conjugate_model

        rng = np.random.default_rng(63)
        g = rng.normal(size=(3, 3))
        m = GPldaModel(mu=rng.normal(size=3), phi_b=g @ g.T, phi_w=np.eye(3))
        a = rng.normal(size=(3, 3)) + 2.0 * np.eye(3)
        mc = conjugate_model(m, a)
        for _ in range(10):
            e, t = rng.normal(size=3), rng.normal(size=3)
            assert gplda_llr(mc, a @ e, a @ t) == pytest.approx(gplda_llr(m, e, t), abs=1e-9)


class TestEndToEnd:
    def test_matched_synthetic_eer(self):
        # seeded reference configuration; the frozen value comes from this run
        from plda_adapt.metrics import compute_metrics, score_trials
        from plda_adapt.synth import make_trials

        phi_b = np.diag(2.0 * 0.85 ** np.arange(16))
        phi_w = np.eye(16)
        train = gen_gplda(
            DomainSpec(dim=16, n_speakers=200, utts_per_speaker=8, seed=911, phi_b=phi_b, phi_w=phi_w, id_prefix="tr")
        )
        evl = gen_gplda(
            DomainSpec(dim=16, n_speakers=60, utts_per_speaker=6, seed=912, phi_b=phi_b, phi_w=phi_w, id_prefix="ev")
        )
        trials = make_trials(evl, 1500, 15000, 913)
        mu = train.mean()
        model = train_gplda(center(train, mu))
        scores = score_trials(model, center(evl, mu), trials)
        labels = trials.require_labels()
        m = compute_metrics(scores, labels)
        assert m.eer < 0.10
        # target scores stochastically dominate nontarget scores
        assert np.median(scores[labels]) > np.median(scores[~labels])
