"""Symmetric/SPD matrix calculus shared by every adaptation method.

Symmetric matrices are plain float64 ndarrays; ``as_symmetric`` is the
validating entry point (symmetry within a relative tolerance, finite
entries).  Eigendecompositions order eigenvalues descending and fix each
eigenvector's sign so that its first non-negligible component is positive,
which makes every derived quantity reproducible run to run.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import InsufficientDataError, InvalidInputError, SingularMatrixError

SYM_RTOL = 1e-10
PSD_RTOL = 1e-8
EIG_FLOOR_RTOL = 1e-10


class SimDiagResult(NamedTuple):
    """Joint diagonalizer ``B`` with B^T @ phi_ref @ B = I and B^T @ phi_dev @ B = diag(E)."""

    B: np.ndarray
    E: np.ndarray


def as_symmetric(m, *, rtol: float = SYM_RTOL, name: str = "matrix") -> np.ndarray:
    """Validate a square symmetric matrix and return its symmetrized float64 copy."""
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InvalidInputError(f"{name} must be square, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    scale = np.abs(a).max() if a.size else 0.0
    asym = np.abs(a - a.T).max() if a.size else 0.0
    if asym > rtol * scale:
        raise InvalidInputError(
            f"{name} is not symmetric: max |m - m.T| = {asym:.3e} exceeds "
            f"{rtol:.1e} * max|m| = {rtol * scale:.3e}"
        )
    return 0.5 * (a + a.T)


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    """Flip eigenvector columns so the first non-negligible component is positive."""
    out = vecs.copy()
    for j in range(out.shape[1]):
        col = out[:, j]
        nz = np.nonzero(np.abs(col) > 1e-12 * max(np.abs(col).max(), 1e-300))[0]
        if nz.size and col[nz[0]] < 0:
            out[:, j] = -col
    return out


def evd_sym(m) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix.

    Returns ``(eigvecs, eigvals)`` with eigenvalues sorted descending and the
    deterministic sign convention applied, so that
    ``eigvecs @ diag(eigvals) @ eigvecs.T`` reconstructs the input.
    """
    a = as_symmetric(m)
    vals, vecs = np.linalg.eigh(a)
    vals = vals[::-1].copy()
    vecs = _fix_signs(vecs[:, ::-1])
    return vecs, vals


def spd_power(m, p: float, *, eps_floor: float | None = None) -> np.ndarray:
    """Symmetric matrix power ``Q diag(lambda^p) Q^T`` (ZCA convention).

    The input must be positive semidefinite.  Negative powers additionally
    require every eigenvalue to exceed ``eps_floor`` (default:
    ``1e-10 * max eigenvalue``).
    """
    vecs, vals = evd_sym(m)
    top = vals[0] if vals.size else 0.0
    if np.any(vals < -PSD_RTOL * max(top, 0.0)):
        raise InvalidInputError(
            f"matrix is not positive semidefinite (min eigenvalue {vals.min():.3e})"
        )
    vals = np.maximum(vals, 0.0)
    if p < 0:
        floor = EIG_FLOOR_RTOL * top if eps_floor is None else eps_floor
        bad = vals <= floor
        if np.any(bad):
            raise SingularMatrixError(
                f"eigenvalue {vals[bad][-1]:.6e} at or below floor {floor:.6e}; "
                f"cannot apply power {p}"
            )
    powered = vals**p
    out = (vecs * powered) @ vecs.T
    return 0.5 * (out + out.T)


def sim_diag(phi_ref, phi_dev) -> SimDiagResult:
    """Simultaneously diagonalize an SPD reference and a PSD developer matrix.

    Computes ``B = Q Lambda^{-1/2} P`` where ``{Q, Lambda}`` eigendecompose
    ``phi_ref`` and ``{P, E}`` eigendecompose the whitened ``phi_dev``.  The
    result satisfies ``B.T @ phi_ref @ B = I`` and ``B.T @ phi_dev @ B =
    diag(E)`` with ``E`` descending; tiny negative ``E`` from roundoff on PSD
    inputs are clamped to zero.
    """
    ref = as_symmetric(phi_ref, name="phi_ref")
    dev = as_symmetric(phi_dev, name="phi_dev")
    if ref.shape != dev.shape:
        raise InvalidInputError(
            f"dimension mismatch: phi_ref {ref.shape} vs phi_dev {dev.shape}"
        )
    q, lam = evd_sym(ref)
    floor = EIG_FLOOR_RTOL * (lam[0] if lam.size else 0.0)
    if lam.size == 0 or lam[-1] <= floor:
        raise SingularMatrixError(
            f"reference matrix is singular (min eigenvalue "
            f"{lam[-1] if lam.size else 0.0:.6e} at or below floor {floor:.6e})"
        )
    white = q * lam**-0.5
    mid = white.T @ dev @ white
    p, e = evd_sym(mid)
    scale = max(np.abs(e).max() if e.size else 0.0, 1.0)
    e = np.where((e < 0) & (e > -1e-10 * scale), 0.0, e)
    return SimDiagResult(B=white @ p, E=e)


def sim_diag_excess(phi_ref, phi_dev) -> np.ndarray:
    """PSD excess ``B^{-T} max(E - I, 0) B^{-1}`` of the developer over the reference.

    This is the additive form of the covariance regularizer: adding it to
    ``phi_ref`` yields ``gamma_max(phi_dev, phi_ref)``.
    """
    b, e = sim_diag(phi_ref, phi_dev)
    binv = np.linalg.inv(b)
    excess = np.maximum(e - 1.0, 0.0)
    out = (binv.T * excess) @ binv
    return 0.5 * (out + out.T)


def gamma_max(phi_dev, phi_ref) -> np.ndarray:
    """Covariance regularizer dominating both inputs in the PSD order.

    Returns ``B^{-T} max(E, I) B^{-1}`` from the simultaneous diagonalization
    of ``{phi_ref, phi_dev}``, i.e. the matrix that agrees with whichever of
    the two inputs is larger along every jointly diagonalized direction.
    With ``phi_dev == phi_ref`` it reduces to the input itself, so a
    regularized interpolation collapses to a plain one.
    """
    ref = as_symmetric(phi_ref, name="phi_ref")
    return ref + sim_diag_excess(ref, phi_dev)


def empirical_total_cov(x, *, ddof: int = 0) -> np.ndarray:
    """Total covariance of a set of row vectors about its own mean.

    Maximum-likelihood normalization (divide by N) by default; pass
    ``ddof=1`` for the unbiased variant.  Accepts an ``EmbeddingSet`` or a
    plain (N, D) array.
    """
    rows = np.asarray(getattr(x, "X", x), dtype=np.float64)
    if rows.ndim != 2:
        raise InvalidInputError(f"expected an (N, D) array, got shape {rows.shape}")
    n = rows.shape[0]
    if n < 2:
        raise InsufficientDataError(f"need at least 2 rows to estimate a covariance, got {n}")
    centered = rows - rows.mean(axis=0)
    cov = centered.T @ centered / (n - ddof)
    return 0.5 * (cov + cov.T)


def clip_psd(m) -> np.ndarray:
    """Project a symmetric matrix onto the PSD cone by clamping negative eigenvalues."""
    vecs, vals = evd_sym(m)
    out = (vecs * np.maximum(vals, 0.0)) @ vecs.T
    return 0.5 * (out + out.T)


def inv_spd(m, *, name: str = "matrix") -> np.ndarray:
    """Inverse of a symmetric positive definite matrix via Cholesky."""
    import scipy.linalg

    a = as_symmetric(m, name=name)
    try:
        c, low = scipy.linalg.cho_factor(a, lower=True)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - scipy raises its own type
        raise SingularMatrixError(f"{name} is not positive definite: {exc}") from exc
    except scipy.linalg.LinAlgError as exc:
        raise SingularMatrixError(f"{name} is not positive definite: {exc}") from exc
    out = scipy.linalg.cho_solve((c, low), np.eye(a.shape[0]))
    return 0.5 * (out + out.T)


def logdet_spd(m, *, name: str = "matrix") -> float:
    """Log-determinant of a symmetric positive definite matrix via Cholesky."""
    import scipy.linalg

    a = as_symmetric(m, name=name)
    try:
        c, _ = scipy.linalg.cho_factor(a, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise SingularMatrixError(f"{name} is not positive definite: {exc}") from exc
    return float(2.0 * np.sum(np.log(np.diag(c))))
