"""Embedding containers, preprocessing pipeline, and the CSV interchange format."""

import numpy as np
import pytest

from plda_adapt import linalg
from plda_adapt.dataset import (
    EmbeddingSet,
    Preprocessor,
    apply_transform,
    center,
    fit_lda,
    length_normalize,
    read_embeddings_csv,
    write_embeddings_csv,
)
from plda_adapt.errors import InvalidConfigError, InvalidInputError


def make_set(x, speakers=None, ids=None):
    x = np.asarray(x, dtype=float)
    if ids is None:
        ids = [f"u{i}" for i in range(x.shape[0])]
    return EmbeddingSet(ids=ids, X=x, speakers=speakers)


class TestEmbeddingSet:
    def test_validation(self):
        with pytest.raises(InvalidInputError):
            EmbeddingSet(ids=["a"], X=np.zeros((2, 2)))
        with pytest.raises(InvalidInputError, match="unique"):
            EmbeddingSet(ids=["a", "a"], X=np.zeros((2, 2)))
        with pytest.raises(InvalidInputError, match="speaker"):
            EmbeddingSet(ids=["a", "b"], X=np.zeros((2, 2)), speakers=["s1"])
        with pytest.raises(InvalidInputError, match="non-finite"):
            EmbeddingSet(ids=["a"], X=[[np.inf, 0.0]])

    def test_immutable_matrix(self):
        s = make_set([[1.0, 2.0]])
        with pytest.raises(ValueError):
            s.X[0, 0] = 5.0

    def test_speaker_groups_order(self):
        s = make_set(np.zeros((4, 1)), speakers=["b", "a", "b", "a"])
        groups = s.speaker_groups()
        assert list(groups) == ["b", "a"]
        np.testing.assert_array_equal(groups["b"], [0, 2])


class TestCenter:
    def test_arithmetic(self):
        s = make_set([[1.0, 1.0], [3.0, 3.0]])
        out = center(s, [2.0, 2.0])
        np.testing.assert_allclose(out.X, [[-1.0, -1.0], [1.0, 1.0]])

    def test_self_centering(self):
        rng = np.random.default_rng(2)
        s = make_set(rng.normal(size=(30, 4)) + 5.0)
        out = center(s, s.mean())
        np.testing.assert_allclose(out.X.mean(axis=0), np.zeros(4), atol=1e-12)

    def test_zero_mean_is_identity(self):
        s = make_set([[1.0, 2.0]])
        np.testing.assert_array_equal(center(s, np.zeros(2)).X, s.X)

    def test_dim_mismatch(self):
        with pytest.raises(InvalidInputError):
            center(make_set([[1.0, 2.0]]), np.zeros(3))


class TestLengthNormalize:
    def test_arithmetic(self):
        out = length_normalize(make_set([[3.0, 4.0]]))
        np.testing.assert_allclose(out.X, np.array([[3.0, 4.0]]) * np.sqrt(2.0) / 5.0)

    def test_idempotent_at_target(self):
        row = np.array([[1.0, 1.0, 1.0]])  # norm sqrt(3) = sqrt(D) already
        out = length_normalize(make_set(row))
        np.testing.assert_allclose(out.X, row, atol=1e-15)

    def test_zero_row_names_id(self):
        s = make_set([[1.0, 0.0], [0.0, 0.0]], ids=["ok", "bad"])
        with pytest.raises(InvalidInputError, match="bad"):
            length_normalize(s)


class TestApplyTransform:
    def test_identity(self):
        s = make_set([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(apply_transform(np.eye(2), s).X, s.X)

    def test_covariance_conjugation_law(self):
        rng = np.random.default_rng(9)
        s = make_set(rng.normal(size=(200, 3)))
        a = rng.normal(size=(3, 3)) + 2.0 * np.eye(3)
        cov_before = linalg.empirical_total_cov(s)
        cov_after = linalg.empirical_total_cov(apply_transform(a, s))
        np.testing.assert_allclose(cov_after, a @ cov_before @ a.T, atol=1e-9)

    def test_coral_transform_aligns_exact_source(self):
        from plda_adapt.adapt import coral_transform

        rng = np.random.default_rng(13)
        src = make_set(rng.normal(size=(150, 4)) @ np.diag([2.0, 1.0, 0.5, 1.5]))
        c_o = linalg.empirical_total_cov(src)
        g = rng.normal(size=(4, 4))
        c_i = g @ g.T + 0.5 * np.eye(4)
        a = coral_transform(c_o, c_i)
        aligned = linalg.empirical_total_cov(apply_transform(a, src))
        assert np.abs(aligned - c_i).max() <= 1e-6

    def test_dim_mismatch(self):
        with pytest.raises(InvalidInputError):
            apply_transform(np.eye(3), make_set([[1.0, 2.0]]))


class TestFitLda:
    def test_two_class_direction(self):
        rng = np.random.default_rng(21)
        n = 300
        means = np.array([[5.0, 0.0], [-5.0, 0.0]])
        x = np.vstack([means[0] + rng.normal(size=(n, 2)), means[1] + rng.normal(size=(n, 2))])
        speakers = ["a"] * n + ["b"] * n
        w = fit_lda(make_set(x, speakers=speakers), 1)
        direction = w[0] / np.linalg.norm(w[0])
        angle = np.arccos(min(abs(direction[0]), 1.0))
        assert angle <= 1e-2

    def test_out_dim_bound(self):
        rng = np.random.default_rng(22)
        s = make_set(rng.normal(size=(20, 4)), speakers=[f"s{i % 4}" for i in range(20)])
        with pytest.raises(InvalidConfigError):
            fit_lda(s, 4)  # out_dim == n_speakers exceeds the rank bound
        w = fit_lda(s, 3)
        assert w.shape == (3, 4)

    def test_whitens_within_class_covariance(self):
        rng = np.random.default_rng(24)
        offsets = 4.0 * rng.normal(size=(8, 5))
        x = rng.normal(size=(400, 5)) @ np.diag([3.0, 2.0, 1.0, 0.5, 0.25])
        speakers = [f"s{i % 8}" for i in range(400)]
        x += offsets[[i % 8 for i in range(400)]]
        s = make_set(x, speakers=speakers)
        w = fit_lda(s, 4)
        groups = s.speaker_groups()
        sw = np.zeros((5, 5))
        for idx in groups.values():
            c = s.X[idx] - s.X[idx].mean(axis=0)
            sw += c.T @ c
        sw /= s.n
        np.testing.assert_allclose(w @ sw @ w.T, np.eye(4), atol=1e-8)

    def test_degenerate_class_means_deterministic(self):
        rng = np.random.default_rng(25)
        base = rng.normal(size=(40, 3))
        x = np.vstack([base, base])  # two classes with identical distributions
        speakers = ["a"] * 40 + ["b"] * 40
        s = make_set(x, speakers=speakers)
        w1 = fit_lda(s, 1)
        w2 = fit_lda(s, 1)
        np.testing.assert_array_equal(w1, w2)
        # identical class means: the top Fisher ratio is numerically zero
        mu = s.X.mean(axis=0)
        sb = np.zeros((3, 3))
        for idx in s.speaker_groups().values():
            dm = s.X[idx].mean(axis=0) - mu
            sb += len(idx) * np.outer(dm, dm)
        assert np.abs(w1[0] @ (sb / s.n) @ w1[0]) <= 1e-10


class TestPreprocessor:
    def test_pipeline_order_and_double_apply(self):
        rng = np.random.default_rng(31)
        s = make_set(rng.normal(size=(60, 4)) + 3.0, speakers=[f"s{i % 6}" for i in range(60)])
        lda = fit_lda(center(s, s.mean()), 2)
        prep = Preprocessor(mean=s.mean(), lda=lda, length_norm=True)
        out = prep.apply(s)
        assert out.dim == 2
        np.testing.assert_allclose(np.linalg.norm(out.X, axis=1), np.sqrt(2.0), atol=1e-12)
        with pytest.raises(InvalidInputError, match="already"):
            prep.apply(out)

    def test_rank_validation(self):
        with pytest.raises(InvalidInputError, match="linearly independent"):
            Preprocessor(mean=np.zeros(3), lda=np.array([[1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]))

    def test_dict_roundtrip(self):
        prep = Preprocessor(mean=np.array([1.0, 2.0]), lda=np.array([[1.0, 0.5]]), length_norm=True)
        again = Preprocessor.from_dict(prep.to_dict())
        np.testing.assert_array_equal(again.mean, prep.mean)
        np.testing.assert_array_equal(again.lda, prep.lda)
        assert again.length_norm


class TestCsvRoundtrip:
    def test_exact_roundtrip(self, tmp_path):
        rng = np.random.default_rng(37)
        s = make_set(rng.normal(size=(10, 3)) * 1e-7, speakers=[f"s{i % 2}" for i in range(10)])
        path = tmp_path / "emb.csv"
        write_embeddings_csv(s, path, comments=("config_hash=deadbeef",))
        again = read_embeddings_csv(path)
        np.testing.assert_array_equal(again.X, s.X)
        assert again.ids == s.ids
        assert again.speakers == s.speakers

    def test_unlabeled(self, tmp_path):
        s = make_set([[1.5, -2.25]])
        path = tmp_path / "emb.csv"
        write_embeddings_csv(s, path)
        again = read_embeddings_csv(path)
        assert again.speakers is None

    def test_bad_header(self, tmp_path):
        path = tmp_path / "emb.csv"
        path.write_text("foo,bar,baz\n1,2,3\n")
        with pytest.raises(InvalidInputError, match="header"):
            read_embeddings_csv(path)
