"""Simplified heavy-tailed PLDA with fast per-utterance statistics.

Parameters are the degrees of freedom ``nu``, a tall loading matrix ``F``
(D x d_h with d_h < D), and a precision matrix ``W``.  Two utterance-
independent matrices are cached at construction:

    B0 = F' W F,        G = W - W F B0^{-1} F' W.

Each embedding ``phi`` condenses into natural-parameter statistics

    b = (nu + D - d_h) / (nu + phi' G phi),        a = b F' W phi,

and trials are scored by combining the per-utterance log-partition
zeta(a, B) = 0.5 a' (I + B)^{-1} a - 0.5 logdet(I + B) with B = b B0:

    llr = zeta(a_e + a_t, B_e + B_t) - zeta(a_e, B_e) - zeta(a_t, B_t).

Embeddings are assumed centered upstream; the model carries no mean.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import linalg
from .dataset import EmbeddingSet
from .errors import InvalidConfigError, InvalidInputError
from .gplda import train_gplda

MODEL_TYPE = "htplda"

DEFAULT_NU = 2.0


@dataclass(frozen=True)
class HtPldaModel:
    nu: float
    F: np.ndarray
    W: np.ndarray
    B0: np.ndarray
    G: np.ndarray

    @property
    def dim(self) -> int:
        return self.F.shape[0]

    @property
    def d_h(self) -> int:
        return self.F.shape[1]

    def to_dict(self) -> dict:
        return {
            "type": MODEL_TYPE,
            "dim": self.dim,
            "d_h": self.d_h,
            "nu": self.nu,
            "F": self.F.tolist(),
            "W": self.W.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HtPldaModel":
        if d.get("type") != MODEL_TYPE:
            raise InvalidInputError(f"expected model type '{MODEL_TYPE}', got {d.get('type')!r}")
        model = ht_precompute(
            float(d["nu"]),
            np.asarray(d["F"], dtype=np.float64),
            np.asarray(d["W"], dtype=np.float64),
        )
        if model.dim != int(d["dim"]) or model.d_h != int(d["d_h"]):
            raise InvalidInputError("declared dim/d_h do not match the stored matrices")
        return model

    def save(self, path, *, extra: dict | None = None) -> None:
        payload = self.to_dict()
        if extra:
            payload.update(extra)
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "HtPldaModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def ht_precompute(nu: float, F, W) -> HtPldaModel:
    """Build a model and cache its utterance-independent matrices B0 and G."""
    if not nu > 0:
        raise InvalidConfigError(f"nu must be positive, got {nu}")
    f = np.array(F, dtype=np.float64, copy=True)
    if f.ndim != 2:
        raise InvalidInputError(f"F must be 2-D (D, d_h), got shape {f.shape}")
    d, d_h = f.shape
    if not 1 <= d_h < d:
        raise InvalidConfigError(f"need 1 <= d_h < D, got d_h={d_h}, D={d}")
    w = linalg.as_symmetric(W, name="W")
    if w.shape[0] != d:
        raise InvalidInputError(f"W has dim {w.shape[0]}, F has dim {d}")
    try:
        np.linalg.cholesky(w)
    except np.linalg.LinAlgError:
        raise InvalidInputError("W must be strictly positive definite") from None
    wf = w @ f
    b0 = linalg.as_symmetric(f.T @ wf, name="F'WF")
    evals = np.linalg.eigvalsh(b0)
    if evals[0] <= 1e-10 * max(evals[-1], 0.0):
        raise InvalidInputError(
            f"F'WF is rank-deficient (min eigenvalue {evals[0]:.3e}); "
            "the loading matrix does not span d_h independent directions"
        )
    g = w - wf @ np.linalg.solve(b0, wf.T)
    g = 0.5 * (g + g.T)
    for arr in (f, w, b0, g):
        arr.setflags(write=False)
    return HtPldaModel(nu=float(nu), F=f, W=w, B0=b0, G=g)


@dataclass(frozen=True)
class UttStats:
    """Natural-parameter summary (a, b) of one embedding under an HT-PLDA model."""

    a: np.ndarray
    b: float


def ht_utt_stats(model: HtPldaModel, phi) -> UttStats:
    v = np.asarray(phi, dtype=np.float64)
    if v.shape != (model.dim,):
        raise InvalidInputError(f"embedding must have shape ({model.dim},), got {v.shape}")
    quad = float(v @ model.G @ v)
    b = (model.nu + model.dim - model.d_h) / (model.nu + quad)
    a = b * (model.F.T @ (model.W @ v))
    return UttStats(a=a, b=float(b))


def _stat_arrays(model: HtPldaModel, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-row (a rotated into B0's eigenbasis, b) plus B0's eigenvalues."""
    u, d0 = linalg.evd_sym(model.B0)
    quad = np.einsum("ij,ij->i", x @ model.G, x)
    b = (model.nu + model.dim - model.d_h) / (model.nu + quad)
    a = (x @ (model.W @ model.F)) * b[:, None]
    return a @ u, b, d0


def _zeta(a_rot: np.ndarray, b: np.ndarray, d0: np.ndarray) -> np.ndarray:
    """Log-partition of a Gaussian natural-parameter pair with B = b * B0."""
    denom = 1.0 + np.outer(b, d0)
    return 0.5 * np.sum(a_rot**2 / denom, axis=1) - 0.5 * np.sum(np.log(denom), axis=1)


def ht_llr(model: HtPldaModel, enroll, test) -> float:
    """Heavy-tailed PLDA trial score from the two utterances' (a, b) statistics."""
    e = np.asarray(enroll, dtype=np.float64)
    t = np.asarray(test, dtype=np.float64)
    if e.shape != (model.dim,) or t.shape != (model.dim,):
        raise InvalidInputError(
            f"trial vectors must have shape ({model.dim},), got {e.shape} and {t.shape}"
        )
    a_rot, b, d0 = _stat_arrays(model, np.stack([e, t]))
    joint = _zeta(a_rot[:1] + a_rot[1:], b[:1] + b[1:], d0)
    single = _zeta(a_rot, b, d0)
    return float(joint[0] - single[0] - single[1])


def score_pairs(model: HtPldaModel, x: np.ndarray, enroll_idx, test_idx) -> np.ndarray:
    """Vectorized llr for many (enroll, test) row-index pairs into ``x``."""
    rows = np.asarray(x, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[1] != model.dim:
        raise InvalidInputError(f"embeddings must be (N, {model.dim}), got {rows.shape}")
    a_rot, b, d0 = _stat_arrays(model, rows)
    single = _zeta(a_rot, b, d0)
    ei = np.asarray(enroll_idx, dtype=np.intp)
    ti = np.asarray(test_idx, dtype=np.intp)
    joint = _zeta(a_rot[ei] + a_rot[ti], b[ei] + b[ti], d0)
    return joint - single[ei] - single[ti]


def ht_init(x: EmbeddingSet, nu: float = DEFAULT_NU, d_h: int | None = None) -> HtPldaModel:
    """Moment-based initializer for an HT-PLDA model from labeled embeddings.

    The between-speaker scatter's top-``d_h`` eigenpairs give
    ``F = V sqrt(lambda)``; the precision is the inverse of the pooled
    within-speaker scatter rescaled by the t-distribution moment factor
    (nu - 2) / nu when nu > 2 (the t covariance exceeds its scale matrix by
    nu / (nu - 2)), with no correction at or below the nu = 2 boundary.
    ``nu`` itself is stored as given; it is a pre-set constant, not estimated.
    """
    if not nu > 0:
        raise InvalidConfigError(f"nu must be positive, got {nu}")
    if d_h is None:
        d_h = max(1, x.dim // 4)
    if not 1 <= d_h < x.dim:
        raise InvalidConfigError(f"need 1 <= d_h < D, got d_h={d_h}, D={x.dim}")
    moments = train_gplda(x)
    vecs, vals = linalg.evd_sym(moments.phi_b)
    lead = np.maximum(vals[:d_h], 0.0)
    f = vecs[:, :d_h] * np.sqrt(lead)
    correction = (nu - 2.0) / nu if nu > 2.0 else 1.0
    w = linalg.inv_spd(moments.phi_w * correction, name="within-speaker scatter")
    return ht_precompute(nu, f, w)
