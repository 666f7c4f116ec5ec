"""Heavy-tailed PLDA: cached identities, statistic formulas, scoring, initializer."""

import numpy as np
import pytest

from plda_adapt.dataset import EmbeddingSet, center
from plda_adapt.errors import InvalidConfigError, InvalidInputError
from plda_adapt.htplda import HtPldaModel, ht_init, ht_llr, ht_precompute, ht_utt_stats, score_pairs
from plda_adapt.synth import DomainSpec, gen_gplda


def simple_model(nu=2.0):
    return ht_precompute(nu, np.array([[1.0], [0.0]]), np.eye(2))


class TestPrecompute:
    def test_hand_case(self):
        m = simple_model()
        np.testing.assert_allclose(m.B0, [[1.0]], atol=1e-14)
        np.testing.assert_allclose(m.G, np.diag([0.0, 1.0]), atol=1e-14)

    def test_orthonormal_columns_give_projector(self):
        rng = np.random.default_rng(71)
        q, _ = np.linalg.qr(rng.normal(size=(6, 2)))
        m = ht_precompute(3.0, q, np.eye(6))
        np.testing.assert_allclose(m.B0, np.eye(2), atol=1e-12)
        np.testing.assert_allclose(m.G, np.eye(6) - q @ q.T, atol=1e-12)

    def test_g_annihilates_f(self):
        rng = np.random.default_rng(73)
        for _ in range(10):
            f = rng.normal(size=(5, 2))
            a = rng.normal(size=(5, 5))
            w = a @ a.T + 0.5 * np.eye(5)
            m = ht_precompute(2.0, f, w)
            assert np.abs(m.G @ m.F).max() <= 1e-8

    def test_rank_deficient_loading_rejected(self):
        f = np.array([[1.0, 2.0], [0.0, 0.0], [1.0, 2.0]])  # rank 1
        with pytest.raises(InvalidInputError, match="rank"):
            ht_precompute(2.0, f, np.eye(3))

    def test_dh_bound(self):
        with pytest.raises(InvalidConfigError):
            ht_precompute(2.0, np.eye(3), np.eye(3))  # d_h == D

    def test_json_roundtrip_recomputes_cache(self, tmp_path):
        rng = np.random.default_rng(79)
        f = rng.normal(size=(4, 2))
        a = rng.normal(size=(4, 4))
        m = ht_precompute(2.5, f, a @ a.T + np.eye(4))
        path = tmp_path / "ht.json"
        m.save(path)
        again = HtPldaModel.load(path)
        np.testing.assert_array_equal(again.F, m.F)
        np.testing.assert_array_equal(again.W, m.W)
        np.testing.assert_allclose(again.B0, m.B0, atol=1e-14)
        np.testing.assert_allclose(again.G, m.G, atol=1e-14)


class TestUttStats:
    def test_hand_case(self):
        m = simple_model(nu=2.0)
        st = ht_utt_stats(m, np.array([1.0, 1.0]))
        assert st.b == pytest.approx(1.0, abs=1e-14)
        np.testing.assert_allclose(st.a, [1.0], atol=1e-14)

    def test_column_space_maximizes_b(self):
        m = simple_model(nu=2.0)
        st = ht_utt_stats(m, np.array([3.0, 0.0]))  # in span(F): phi'G phi = 0
        assert st.b == pytest.approx((2.0 + 2.0 - 1.0) / 2.0, abs=1e-14)

    def test_b_bounds_and_scale_monotonicity(self):
        rng = np.random.default_rng(83)
        f = rng.normal(size=(4, 2))
        m = ht_precompute(3.0, f, np.eye(4))
        bmax = (3.0 + 4.0 - 2.0) / 3.0
        phi = rng.normal(size=4)
        prev = np.inf
        for c in (0.5, 1.0, 2.0, 4.0, 8.0):
            b = ht_utt_stats(m, c * phi).b
            assert 0.0 < b <= bmax + 1e-12
            assert b < prev
            prev = b


class TestLlr:
    def test_zero_stats_reduction(self):
        # embeddings orthogonal to W F carry a = 0; the score is the pure
        # log-determinant combination
        m = simple_model(nu=2.0)
        e = np.array([0.0, 1.0])  # quad = 1, b = 1
        t = np.array([0.0, 2.0])  # quad = 4, b = 0.5
        expected = 0.5 * (np.log(2.0) + np.log(1.5) - np.log(2.5))
        assert ht_llr(m, e, t) == pytest.approx(expected, abs=1e-12)

    def test_symmetry(self):
        rng = np.random.default_rng(89)
        f = rng.normal(size=(5, 2))
        a = rng.normal(size=(5, 5))
        m = ht_precompute(2.0, f, a @ a.T + np.eye(5))
        for _ in range(20):
            e, t = rng.normal(size=5), rng.normal(size=5)
            assert ht_llr(m, e, t) == pytest.approx(ht_llr(m, t, e), abs=1e-10)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(97)
        f = rng.normal(size=(4, 2))
        m = ht_precompute(2.0, f, np.eye(4))
        x = rng.normal(size=(9, 4))
        ei = rng.integers(0, 9, size=25)
        ti = rng.integers(0, 9, size=25)
        batch = score_pairs(m, x, ei, ti)
        singles = [ht_llr(m, x[i], x[j]) for i, j in zip(ei, ti)]
        np.testing.assert_allclose(batch, singles, atol=1e-10)


class TestInit:
    def test_recovers_between_subspace_on_gaussian_data(self):
        # large nu: the generator is near-Gaussian, so the moment initializer
        # should recover the leading between-speaker eigenvalues
        phi_b = np.diag([3.0, 2.0, 1.0, 0.0, 0.0, 0.0])
        spec = DomainSpec(
            dim=6, n_speakers=600, utts_per_speaker=10, seed=921, phi_b=phi_b, phi_w=np.eye(6)
        )
        data = gen_gplda(spec)
        model = ht_init(center(data, data.mean()), nu=200.0, d_h=3)
        ffT = model.F @ model.F.T
        lead = np.linalg.eigvalsh(ffT)[::-1][:3]
        np.testing.assert_allclose(lead, [3.0, 2.0, 1.0], rtol=0.15)
        assert np.linalg.matrix_rank(ffT, tol=1e-8) == 3

    def test_moment_correction_above_two(self):
        rng = np.random.default_rng(101)
        x = rng.normal(size=(300, 4))
        speakers = [f"s{i % 30}" for i in range(300)]
        data = EmbeddingSet(ids=[f"u{i}" for i in range(300)], X=x, speakers=speakers)
        m4 = ht_init(data, nu=4.0, d_h=2)
        m2 = ht_init(data, nu=2.0, d_h=2)
        # W scales by the inverse of the (nu-2)/nu moment factor
        np.testing.assert_allclose(m4.W, m2.W * (4.0 / 2.0), atol=1e-9)

    def test_nu_two_boundary_no_correction(self):
        rng = np.random.default_rng(103)
        x = rng.normal(size=(100, 3))
        speakers = [f"s{i % 10}" for i in range(100)]
        data = EmbeddingSet(ids=[f"u{i}" for i in range(100)], X=x, speakers=speakers)
        model = ht_init(data, nu=2.0, d_h=1)
        assert model.nu == 2.0

    def test_dh_too_large(self):
        rng = np.random.default_rng(107)
        x = rng.normal(size=(40, 3))
        data = EmbeddingSet(
            ids=[f"u{i}" for i in range(40)], X=x, speakers=[f"s{i % 4}" for i in range(40)]
        )
        with pytest.raises(InvalidConfigError):
            ht_init(data, nu=2.0, d_h=3)
