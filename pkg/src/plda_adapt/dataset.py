"""Embedding containers and the preprocessing pipeline.

An :class:`EmbeddingSet` is an immutable bundle of utterance ids, optional
speaker labels, and an (N, D) float64 matrix with one embedding per row.
Preprocessing is always applied in the fixed order
center -> (optional LDA) -> (optional length normalization), enforced by
:class:`Preprocessor`.

CSV format: header ``id,speaker,e0,...,e{D-1}``; the speaker column may be
empty for unlabeled sets.  Floats are written with ``repr`` so they parse
back bit-exact.  Lines starting with ``#`` are treated as comments.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg

from .errors import InsufficientDataError, InvalidConfigError, InvalidInputError


@dataclass(frozen=True)
class EmbeddingSet:
    ids: tuple[str, ...]
    X: np.ndarray
    speakers: tuple[str, ...] | None = None
    preprocessed: bool = False

    def __post_init__(self):
        ids = tuple(str(i) for i in self.ids)
        x = np.array(self.X, dtype=np.float64, copy=True)
        if x.ndim != 2:
            raise InvalidInputError(f"X must be a 2-D (N, D) matrix, got shape {x.shape}")
        if len(ids) != x.shape[0]:
            raise InvalidInputError(
                f"{len(ids)} ids but {x.shape[0]} embedding rows"
            )
        if len(set(ids)) != len(ids):
            raise InvalidInputError("utterance ids must be unique")
        if not np.all(np.isfinite(x)):
            raise InvalidInputError("embeddings contain non-finite values")
        speakers = self.speakers
        if speakers is not None:
            speakers = tuple(str(s) for s in speakers)
            if len(speakers) != len(ids):
                raise InvalidInputError(
                    f"{len(speakers)} speaker labels but {len(ids)} rows"
                )
        x.setflags(write=False)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "X", x)
        object.__setattr__(self, "speakers", speakers)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @property
    def labeled(self) -> bool:
        return self.speakers is not None

    def mean(self) -> np.ndarray:
        return self.X.mean(axis=0)

    def require_speakers(self) -> tuple[str, ...]:
        if self.speakers is None:
            raise InvalidInputError("this operation requires speaker labels")
        return self.speakers

    def speaker_groups(self) -> dict[str, np.ndarray]:
        """Row indices per speaker, ordered by first appearance."""
        groups: dict[str, list[int]] = {}
        for i, spk in enumerate(self.require_speakers()):
            groups.setdefault(spk, []).append(i)
        return {k: np.asarray(v, dtype=np.intp) for k, v in groups.items()}

    def with_x(self, x: np.ndarray, *, preprocessed: bool | None = None) -> "EmbeddingSet":
        """New set with the same ids/labels and a replaced matrix."""
        return EmbeddingSet(
            ids=self.ids,
            X=x,
            speakers=self.speakers,
            preprocessed=self.preprocessed if preprocessed is None else preprocessed,
        )


def center(x: EmbeddingSet, mean) -> EmbeddingSet:
    """Subtract a mean vector from every row."""
    mu = np.asarray(mean, dtype=np.float64)
    if mu.shape != (x.dim,):
        raise InvalidInputError(f"mean has shape {mu.shape}, expected ({x.dim},)")
    return x.with_x(x.X - mu)


def length_normalize(x: EmbeddingSet, *, target: float | None = None) -> EmbeddingSet:
    """Scale every row to a common norm, sqrt(D) by default.

    The sqrt(D) target keeps per-dimension variance O(1) regardless of the
    embedding dimension.
    """
    if target is None:
        target = float(np.sqrt(x.dim))
    norms = np.linalg.norm(x.X, axis=1)
    zero = np.nonzero(norms == 0.0)[0]
    if zero.size:
        raise InvalidInputError(
            f"cannot length-normalize zero row '{x.ids[zero[0]]}'"
        )
    return x.with_x(x.X * (target / norms)[:, None])


def apply_transform(a, x: EmbeddingSet) -> EmbeddingSet:
    """Map every row through a linear transform: row -> a @ row."""
    mat = np.asarray(a, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[1] != x.dim:
        raise InvalidInputError(
            f"transform shape {mat.shape} incompatible with embedding dim {x.dim}"
        )
    return x.with_x(x.X @ mat.T)


def fit_lda(x: EmbeddingSet, out_dim: int) -> np.ndarray:
    """Fisher LDA projection from a labeled set.

    Solves the generalized eigenproblem of between- vs within-class scatter;
    the returned (out_dim, D) matrix has one discriminant direction per row,
    ordered by descending Fisher ratio, normalized so the projected
    within-class covariance is the identity.  A near-singular within-scatter
    is ridge-regularized before solving.
    """
    groups = x.speaker_groups()
    n_spk = len(groups)
    if n_spk < 2:
        raise InsufficientDataError(f"LDA needs at least 2 speakers, got {n_spk}")
    max_dim = min(x.dim, n_spk - 1)
    if not 1 <= out_dim <= max_dim:
        raise InvalidConfigError(
            f"out_dim={out_dim} outside valid range [1, {max_dim}] "
            f"(dim={x.dim}, n_speakers={n_spk})"
        )
    mu = x.mean()
    d = x.dim
    sw = np.zeros((d, d))
    sb = np.zeros((d, d))
    for idx in groups.values():
        rows = x.X[idx]
        m = rows.mean(axis=0)
        c = rows - m
        sw += c.T @ c
        dm = m - mu
        sb += len(idx) * np.outer(dm, dm)
    sw /= x.n
    sb /= x.n
    evals = np.linalg.eigvalsh(sw)
    if evals[0] <= 1e-10 * max(evals[-1], 0.0) or evals[-1] <= 0.0:
        scale = np.trace(sw) / d
        if scale <= 0.0:
            scale = max(np.trace(sb) / d, 1.0)
        sw = sw + (1e-6 * scale) * np.eye(d)
    ratios, vecs = scipy.linalg.eigh(sb, sw)
    order = np.argsort(ratios)[::-1][:out_dim]
    w = vecs[:, order].T
    for i in range(w.shape[0]):
        nz = np.nonzero(np.abs(w[i]) > 1e-12 * max(np.abs(w[i]).max(), 1e-300))[0]
        if nz.size and w[i, nz[0]] < 0:
            w[i] = -w[i]
    return w


@dataclass(frozen=True)
class Preprocessor:
    """Records and enforces the center -> LDA -> length-norm pipeline."""

    mean: np.ndarray
    lda: np.ndarray | None = None
    length_norm: bool = False

    def __post_init__(self):
        mu = np.asarray(self.mean, dtype=np.float64)
        if mu.ndim != 1:
            raise InvalidInputError("preprocessor mean must be a vector")
        lda = self.lda
        if lda is not None:
            lda = np.asarray(lda, dtype=np.float64)
            if lda.ndim != 2 or lda.shape[1] != mu.shape[0]:
                raise InvalidInputError(
                    f"LDA shape {lda.shape} incompatible with mean dim {mu.shape[0]}"
                )
            if np.linalg.matrix_rank(lda) < lda.shape[0]:
                raise InvalidInputError("LDA rows must be linearly independent")
        object.__setattr__(self, "mean", mu)
        object.__setattr__(self, "lda", lda)

    @property
    def out_dim(self) -> int:
        return self.mean.shape[0] if self.lda is None else self.lda.shape[0]

    def apply(self, x: EmbeddingSet) -> EmbeddingSet:
        if x.preprocessed:
            raise InvalidInputError("embedding set has already been preprocessed")
        y = center(x, self.mean)
        if self.lda is not None:
            y = apply_transform(self.lda, y)
        if self.length_norm:
            y = length_normalize(y)
        return replace(y, preprocessed=True)

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "lda": None if self.lda is None else self.lda.tolist(),
            "length_norm": self.length_norm,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Preprocessor":
        return cls(
            mean=np.asarray(d["mean"], dtype=np.float64),
            lda=None if d.get("lda") is None else np.asarray(d["lda"], dtype=np.float64),
            length_norm=bool(d.get("length_norm", False)),
        )


def write_embeddings_csv(x: EmbeddingSet, path, *, comments: tuple[str, ...] = ()) -> None:
    """Write a set in the pinned CSV format (optionally preceded by # comments)."""
    with open(path, "w", newline="") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(["id", "speaker"] + [f"e{j}" for j in range(x.dim)])
        speakers = x.speakers if x.speakers is not None else ("",) * x.n
        for i in range(x.n):
            writer.writerow([x.ids[i], speakers[i]] + [repr(float(v)) for v in x.X[i]])


def read_embeddings_csv(path) -> EmbeddingSet:
    """Read a set from the pinned CSV format, skipping # comment lines."""
    ids: list[str] = []
    speakers: list[str] = []
    rows: list[list[float]] = []
    with open(path, newline="") as fh:
        lines = (ln for ln in fh if not ln.startswith("#"))
        reader = csv.reader(lines)
        try:
            header = next(reader)
        except StopIteration:
            raise InvalidInputError(f"{path}: empty embeddings file") from None
        if len(header) < 3 or header[0] != "id" or header[1] != "speaker":
            raise InvalidInputError(
                f"{path}: expected header 'id,speaker,e0,...', got {header[:3]}"
            )
        dim = len(header) - 2
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != dim + 2:
                raise InvalidInputError(
                    f"{path}:{lineno}: expected {dim + 2} fields, got {len(rec)}"
                )
            ids.append(rec[0])
            speakers.append(rec[1])
            rows.append([float(v) for v in rec[2:]])
    if not rows:
        raise InvalidInputError(f"{path}: embeddings file has no data rows")
    spk = tuple(speakers) if any(s != "" for s in speakers) else None
    return EmbeddingSet(ids=tuple(ids), X=np.asarray(rows), speakers=spk)
