"""Gaussian PLDA: two-covariance model estimation and log-likelihood-ratio scoring.

The model keeps a global mean plus between-speaker and within-speaker
covariance matrices.  A trial (enroll, test) is scored as

    llr = log N([e; t]; 0, [[S, Phi_B], [Phi_B, S]])
          - log N(e; 0, S) - log N(t; 0, S),        S = Phi_B + Phi_W

with e, t centered by the model mean.  The joint Gaussian decouples in the
rotated coordinates (e+t)/sqrt(2), (e-t)/sqrt(2) into covariances
Phi_W + 2 Phi_B and Phi_W, which is what the implementation evaluates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import linalg
from .dataset import EmbeddingSet
from .errors import InsufficientDataError, InvalidInputError, SingularMatrixError

MODEL_TYPE = "gplda"


@dataclass(frozen=True)
class GPldaModel:
    mu: np.ndarray
    phi_b: np.ndarray
    phi_w: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=np.float64)
        phi_b = linalg.as_symmetric(self.phi_b, name="phi_b")
        phi_w = linalg.as_symmetric(self.phi_w, name="phi_w")
        if mu.ndim != 1 or phi_b.shape[0] != mu.shape[0] or phi_w.shape[0] != mu.shape[0]:
            raise InvalidInputError(
                f"inconsistent dimensions: mu {mu.shape}, phi_b {phi_b.shape}, "
                f"phi_w {phi_w.shape}"
            )
        b_min = np.linalg.eigvalsh(phi_b)[0]
        if b_min < -linalg.PSD_RTOL * max(np.abs(phi_b).max(), 1.0):
            raise InvalidInputError(f"phi_b is not PSD (min eigenvalue {b_min:.3e})")
        try:
            np.linalg.cholesky(phi_w)
        except np.linalg.LinAlgError:
            raise InvalidInputError("phi_w must be strictly positive definite") from None
        mu.setflags(write=False)
        phi_b.setflags(write=False)
        phi_w.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "phi_b", phi_b)
        object.__setattr__(self, "phi_w", phi_w)

    @property
    def dim(self) -> int:
        return self.mu.shape[0]

    @property
    def phi_tot(self) -> np.ndarray:
        """Total covariance Phi_B + Phi_W of the model."""
        return self.phi_b + self.phi_w

    def to_dict(self) -> dict:
        return {
            "type": MODEL_TYPE,
            "dim": self.dim,
            "mu": self.mu.tolist(),
            "phi_b": self.phi_b.tolist(),
            "phi_w": self.phi_w.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GPldaModel":
        if d.get("type") != MODEL_TYPE:
            raise InvalidInputError(f"expected model type '{MODEL_TYPE}', got {d.get('type')!r}")
        model = cls(
            mu=np.asarray(d["mu"], dtype=np.float64),
            phi_b=np.asarray(d["phi_b"], dtype=np.float64),
            phi_w=np.asarray(d["phi_w"], dtype=np.float64),
        )
        if model.dim != int(d["dim"]):
            raise InvalidInputError(
                f"declared dim {d['dim']} does not match matrices of dim {model.dim}"
            )
        return model

    def save(self, path, *, extra: dict | None = None) -> None:
        payload = self.to_dict()
        if extra:
            payload.update(extra)
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "GPldaModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def train_gplda(x: EmbeddingSet, *, pd_floor_rel: float = 1e-8) -> GPldaModel:
    """Estimate a G-PLDA model by moment (scatter) matching.

    ``phi_w`` pools per-speaker scatter about each speaker mean (normalized
    by the within degrees of freedom), floored to strict positive
    definiteness.  ``phi_b`` is the scatter of speaker means about the global
    mean minus the expected within-speaker leakage ``phi_w / n_s``,
    eigenvalue-clipped back onto the PSD cone since small speakers would
    otherwise push it indefinite.
    """
    groups = x.speaker_groups()
    if len(groups) < 2:
        raise InsufficientDataError(
            f"G-PLDA training needs at least 2 speakers, got {len(groups)}"
        )
    counts = np.array([idx.size for idx in groups.values()], dtype=np.float64)
    within_dof = float(np.sum(counts - 1.0))
    if within_dof <= 0:
        raise InsufficientDataError(
            "no speaker has more than one utterance; within-speaker covariance "
            "is unestimable"
        )
    d = x.dim
    mu = x.mean()
    sw = np.zeros((d, d))
    means = np.empty((len(groups), d))
    for k, idx in enumerate(groups.values()):
        rows = x.X[idx]
        m = rows.mean(axis=0)
        means[k] = m
        c = rows - m
        sw += c.T @ c
    sw /= within_dof
    sw = 0.5 * (sw + sw.T)

    floor_scale = np.trace(sw) / d
    if floor_scale <= 0.0:
        total = linalg.empirical_total_cov(x.X)
        floor_scale = max(np.trace(total) / d, 1.0)
    phi_w = sw + (pd_floor_rel * floor_scale) * np.eye(d)

    dm = means - mu
    sb_raw = dm.T @ dm / len(groups)
    leak = sw * float(np.mean(1.0 / counts))
    phi_b = linalg.clip_psd(sb_raw - leak)
    return GPldaModel(mu=mu, phi_b=phi_b, phi_w=phi_w)


def _score_params(model: GPldaModel) -> tuple[np.ndarray, np.ndarray, float]:
    """Quadratic-form coefficients (G, H, c) with llr = e'Ge + t'Gt + 2 e'Ht + c."""
    sigma = model.phi_tot
    sum_cov = model.phi_w + 2.0 * model.phi_b
    try:
        k = linalg.inv_spd(sum_cov, name="phi_w + 2 phi_b")
        ell = linalg.inv_spd(model.phi_w, name="phi_w")
        m = linalg.inv_spd(sigma, name="phi_b + phi_w")
        c = (
            -0.5 * linalg.logdet_spd(sum_cov)
            - 0.5 * linalg.logdet_spd(model.phi_w)
            + linalg.logdet_spd(sigma)
        )
    except SingularMatrixError as exc:
        raise SingularMatrixError(f"stacked trial covariance is singular: {exc}") from exc
    g = -0.25 * k - 0.25 * ell + 0.5 * m
    h = -0.25 * k + 0.25 * ell
    return g, h, float(c)


def gplda_llr(model: GPldaModel, enroll, test) -> float:
    """Log-likelihood ratio of same-speaker vs different-speaker for one trial."""
    e = np.asarray(enroll, dtype=np.float64) - model.mu
    t = np.asarray(test, dtype=np.float64) - model.mu
    if e.shape != (model.dim,) or t.shape != (model.dim,):
        raise InvalidInputError(
            f"trial vectors must have shape ({model.dim},), got {e.shape} and {t.shape}"
        )
    g, h, c = _score_params(model)
    return float(e @ g @ e + t @ g @ t + 2.0 * (e @ h @ t) + c)


def score_pairs(model: GPldaModel, x: np.ndarray, enroll_idx, test_idx) -> np.ndarray:
    """Vectorized llr for many (enroll, test) row-index pairs into ``x``."""
    y = np.asarray(x, dtype=np.float64) - model.mu
    if y.ndim != 2 or y.shape[1] != model.dim:
        raise InvalidInputError(f"embeddings must be (N, {model.dim}), got {y.shape}")
    g, h, c = _score_params(model)
    quad = np.einsum("ij,ij->i", y @ g, y)
    ei = np.asarray(enroll_idx, dtype=np.intp)
    ti = np.asarray(test_idx, dtype=np.intp)
    cross = np.einsum("ij,ij->i", y[ei] @ h, y[ti])
    return quad[ei] + quad[ti] + 2.0 * cross + c
