"""Covariance-based domain adaptation of PLDA back-ends.

One generalized rule covers every method here: the adapted covariance is

    phi_plus = alpha * phi_0 + beta * gamma_max(phi_1, phi_2)

where ``gamma_max`` (see :mod:`plda_adapt.linalg`) dominates both of its
arguments in the PSD order, so the adapted model's variability can only
grow relative to the reference.  Choosing which covariances play phi_0,
phi_1, phi_2 recovers the named special cases:

* ``lip`` / ``lip_reg``   - linear interpolation of two trained models
  (Garcia-Romero & McCree, 2014), optionally regularized.
* ``cip`` / ``cip_reg``   - interpolation against a CORAL pseudo in-domain
  model built from the out-of-domain one.
* ``coral``               - correlation alignment (Sun et al., 2016):
  whiten by the source total covariance, recolor by the target's.
* ``coral_plus``          - CORAL followed by per-covariance
  regularization (Lee et al., 2019).
* ``kaldi``               - the Kaldi toolkit's unsupervised PLDA
  adaptation: regularize the total covariance, split the excess.
* ``fda``                 - feature-distribution adaptor (Bousquet &
  Rouvier, 2019), an embedding-level transform with eigenvalue clamping.
* ``kaldi_star``          - FDA with the empirical source covariance
  replaced by the model total covariance.
* ``ht_w``                - interpolation/regularization of the
  heavy-tailed model's inverse precision.

Embedding-level and model-level application are interchangeable: scoring a
conjugated model on data equals scoring the original model on inversely
transformed data (see :func:`conjugate_model`).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import linalg
from .errors import InvalidConfigError, InvalidInputError
from .gplda import GPldaModel
from .htplda import HtPldaModel, ht_precompute

METHODS = (
    "generalized",
    "lip",
    "cip",
    "coral",
    "coral_plus",
    "kaldi",
    "kaldi_star",
    "fda",
    "lip_reg",
    "cip_reg",
    "ht_w",
)

# names as they appear on the command line / in config files
CLI_METHOD_NAMES = {
    "lip": "lip",
    "cip": "cip",
    "coral": "coral",
    "coral+": "coral_plus",
    "kaldi": "kaldi",
    "kaldi*": "kaldi_star",
    "fda": "fda",
    "lip-reg": "lip_reg",
    "cip-reg": "cip_reg",
    "ht-w": "ht_w",
}


@dataclass(frozen=True)
class AdaptPlan:
    """Validated bundle of method name and weights for one adaptation run."""

    method: str
    alpha: float = 0.5
    beta: float = 0.5
    beta_b: float | None = None
    beta_w: float | None = None
    gamma_b: float = 0.5
    gamma_w: float = 0.5
    regularize: bool = False
    fda_regularize: bool = True

    def validate(self) -> "AdaptPlan":
        if self.method not in METHODS:
            raise InvalidConfigError(
                f"unknown method {self.method!r}; expected one of {METHODS}"
            )
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.beta < 0.0:
            raise InvalidConfigError(f"beta must be >= 0, got {self.beta}")
        if self.gamma_b < 0.0 or self.gamma_w < 0.0:
            raise InvalidConfigError(
                f"gamma weights must be >= 0, got ({self.gamma_b}, {self.gamma_w})"
            )
        if self.method == "kaldi":
            if self.beta_b is None or self.beta_w is None:
                raise InvalidConfigError("kaldi requires beta_b and beta_w")
            if self.beta_b < 0.0 or self.beta_w < 0.0 or self.beta_b + self.beta_w > 1.0:
                raise InvalidConfigError(
                    f"kaldi weights must satisfy beta_b, beta_w >= 0 and "
                    f"beta_b + beta_w <= 1, got ({self.beta_b}, {self.beta_w})"
                )
        return self

    @classmethod
    def from_cli_name(cls, name: str, **kwargs) -> "AdaptPlan":
        if name not in CLI_METHOD_NAMES:
            raise InvalidConfigError(
                f"unknown method {name!r}; expected one of {sorted(CLI_METHOD_NAMES)}"
            )
        method = CLI_METHOD_NAMES[name]
        if method in ("lip_reg", "cip_reg"):
            kwargs.setdefault("regularize", True)
        return cls(method=method, **kwargs).validate()


def generalized_adapt(phi0, phi1, phi2, alpha: float, beta: float) -> np.ndarray:
    """The generalized rule: alpha * phi0 + beta * gamma_max(phi1, phi2)."""
    p0 = linalg.as_symmetric(phi0, name="phi0")
    return alpha * p0 + beta * linalg.gamma_max(phi1, phi2)


def _pd_reference(m: np.ndarray) -> np.ndarray:
    """Lift a PSD matrix just above singular so it can anchor a joint diagonalization.

    Trained between-speaker covariances are eigenvalue-clipped and may carry
    exact zeros; a relative jitter is added only in that case.
    """
    vals = np.linalg.eigvalsh(m)
    if vals[0] > linalg.EIG_FLOOR_RTOL * max(vals[-1], 0.0):
        return m
    d = m.shape[0]
    eps = 1e-8 * max(np.trace(m) / d, 1e-300)
    return m + eps * np.eye(d)


def lip(
    model_base: GPldaModel,
    model_dev: GPldaModel,
    alpha: float,
    regularize: bool = False,
) -> GPldaModel:
    """Linear interpolation of two G-PLDA models, covariance by covariance.

    With ``regularize`` the developer covariance is first lifted to
    ``gamma_max(phi_dev, phi_base)`` so the blend can never fall below the
    base model.  The mean is taken from the base model.  Passing a CORAL
    pseudo in-domain model as ``model_dev`` makes this CIP / CIP-reg.
    """
    if model_base.dim != model_dev.dim:
        raise InvalidInputError(
            f"model dims differ: {model_base.dim} vs {model_dev.dim}"
        )
    if not 0.0 <= alpha <= 1.0:
        raise InvalidConfigError(f"alpha must lie in [0, 1], got {alpha}")

    def blend(base, dev):
        term = linalg.gamma_max(dev, _pd_reference(base)) if regularize else dev
        return alpha * base + (1.0 - alpha) * term

    return GPldaModel(
        mu=model_base.mu,
        phi_b=blend(model_base.phi_b, model_dev.phi_b),
        phi_w=blend(model_base.phi_w, model_dev.phi_w),
    )


def coral_transform(c_o, c_i) -> np.ndarray:
    """CORAL alignment matrix A = C_I^{1/2} C_O^{-1/2} (ZCA on both sides).

    Satisfies A C_O A' = C_I: source-domain second-order statistics are
    mapped exactly onto the target's.
    """
    return linalg.spd_power(c_i, 0.5) @ linalg.spd_power(c_o, -0.5)


def conjugate_model(model, a):
    """Push a model through the embedding transform phi -> a @ phi.

    For G-PLDA this maps (mu, phi) -> (a mu, a phi a'); for HT-PLDA the
    loading matrix becomes a F and the precision (a W^{-1} a')^{-1}.  Scoring
    the conjugated model on transformed embeddings reproduces the original
    model's scores on the raw embeddings exactly, which is what makes
    embedding-level and model-level adaptation interchangeable.
    """
    mat = np.asarray(a, dtype=np.float64)
    if isinstance(model, GPldaModel):
        if mat.shape != (model.dim, model.dim):
            raise InvalidInputError(
                f"transform must be ({model.dim}, {model.dim}), got {mat.shape}"
            )
        return GPldaModel(
            mu=mat @ model.mu,
            phi_b=mat @ model.phi_b @ mat.T,
            phi_w=mat @ model.phi_w @ mat.T,
        )
    if isinstance(model, HtPldaModel):
        if mat.shape != (model.dim, model.dim):
            raise InvalidInputError(
                f"transform must be ({model.dim}, {model.dim}), got {mat.shape}"
            )
        winv = linalg.inv_spd(model.W, name="W")
        w_new = linalg.inv_spd(mat @ winv @ mat.T, name="transformed W^{-1}")
        return ht_precompute(model.nu, mat @ model.F, w_new)
    raise InvalidInputError(f"unsupported model type {type(model).__name__}")


def coral_model(model_o: GPldaModel, c_o, c_i) -> GPldaModel:
    """Pseudo in-domain model: conjugate an out-of-domain model by the CORAL transform."""
    return conjugate_model(model_o, coral_transform(c_o, c_i))


def coral_plus(model_o: GPldaModel, c_i, gamma_b: float, gamma_w: float) -> GPldaModel:
    """CORAL+ unsupervised adaptation.

    For each covariance phi in {phi_b, phi_w}: build its CORAL image
    S = C_I^{1/2} C_O^{-1/2} phi C_O^{-1/2} C_I^{1/2} using the model total
    covariance as C_O, then add gamma times the PSD excess of S over phi.
    Each adapted covariance therefore dominates its original.
    """
    if gamma_b < 0.0 or gamma_w < 0.0:
        raise InvalidConfigError(
            f"gamma weights must be >= 0, got ({gamma_b}, {gamma_w})"
        )
    c_o_model = model_o.phi_tot
    half = coral_transform(c_o_model, c_i)

    def adapt_one(phi, gamma):
        s = half @ phi @ half.T
        return phi + gamma * linalg.sim_diag_excess(_pd_reference(phi), s)

    return GPldaModel(
        mu=model_o.mu,
        phi_b=adapt_one(model_o.phi_b, gamma_b),
        phi_w=adapt_one(model_o.phi_w, gamma_w),
    )


def kaldi_adapt(model_o: GPldaModel, c_i, beta_b: float, beta_w: float) -> GPldaModel:
    """Kaldi-style unsupervised adaptation.

    Simultaneously diagonalize the model total covariance against the
    in-domain empirical total covariance, form the PSD excess
    B^{-T} max(E - I, 0) B^{-1}, and distribute it over the within and
    between covariances with weights beta_w and beta_b.  The adapted total
    covariance dominates the original whenever the weights are nonnegative.
    """
    if beta_b < 0.0 or beta_w < 0.0 or beta_b + beta_w > 1.0:
        raise InvalidConfigError(
            f"kaldi weights must satisfy beta_b, beta_w >= 0 and "
            f"beta_b + beta_w <= 1, got ({beta_b}, {beta_w})"
        )
    excess = linalg.sim_diag_excess(model_o.phi_tot, c_i)
    return GPldaModel(
        mu=model_o.mu,
        phi_b=model_o.phi_b + beta_b * excess,
        phi_w=model_o.phi_w + beta_w * excess,
    )


def fda_transform(c_o, c_i, regularize: bool = True) -> np.ndarray:
    """Feature-distribution adaptor transform.

    Whiten by C_O^{-1/2}, eigendecompose the whitened target covariance
    P Delta P', clamp Delta below by the identity when ``regularize`` is on,
    and recolor:

        A = C_O^{1/2} P Dhat^{1/2} P' C_O^{-1/2},   Dhat = max(Delta, I).

    Unregularized, A C_O A' = C_I exactly; regularized, the aligned
    covariance dominates both C_O and C_I, and with C_I already below C_O it
    degenerates to the identity (no adaptation).
    """
    co_half = linalg.spd_power(c_o, 0.5)
    co_ihalf = linalg.spd_power(c_o, -0.5)
    mid = co_ihalf @ linalg.as_symmetric(c_i, name="c_i") @ co_ihalf
    p, delta = linalg.evd_sym(mid)
    delta = np.maximum(delta, 0.0)
    if regularize:
        delta = np.maximum(delta, 1.0)
    return co_half @ (p * np.sqrt(delta)) @ p.T @ co_ihalf


def kaldi_star_transform(model_o: GPldaModel, c_i) -> np.ndarray:
    """Modified Kaldi transform: FDA with the model total covariance as the source.

    Model-level use conjugates the model by the returned matrix, exactly as
    with CORAL/FDA.
    """
    return fda_transform(model_o.phi_tot, c_i, regularize=True)


def ht_adapt_w(
    model_o: HtPldaModel,
    dev_winv,
    alpha: float,
    regularize: bool = False,
    reference_winv=None,
) -> HtPldaModel:
    """Adapt an HT-PLDA model through its inverse precision W^{-1}.

    The between-speaker part F F' is rank-deficient by construction, which
    rules out the covariance regularizer there; only W^{-1} is interpolated
    (and optionally regularized against ``reference_winv``, defaulting to the
    base model's own W^{-1}).  ``nu`` and ``F`` are carried over unchanged
    and the cached matrices are rebuilt.
    """
    if not 0.0 <= alpha <= 1.0:
        raise InvalidConfigError(f"alpha must lie in [0, 1], got {alpha}")
    winv_base = linalg.inv_spd(model_o.W, name="W")
    dev = linalg.as_symmetric(dev_winv, name="dev_winv")
    if regularize:
        ref = winv_base if reference_winv is None else reference_winv
        dev = linalg.gamma_max(dev, ref)
    blended = alpha * winv_base + (1.0 - alpha) * dev
    w_new = linalg.inv_spd(blended, name="adapted W^{-1}")
    return ht_precompute(model_o.nu, model_o.F, w_new)


def ht_lip_f(model_base: HtPldaModel, model_dev: HtPldaModel, alpha: float) -> HtPldaModel:
    """Interpolate two HT-PLDA loading matrices through their outer products.

    F F' is blended as alpha * F_b F_b' + (1 - alpha) * F_d F_d' and a new F
    is recovered from the top-d_h eigenpairs (scaled by sqrt eigenvalue,
    deterministic signs), so the result has rank d_h exactly.  W and nu come
    from the base model.
    """
    if model_base.dim != model_dev.dim or model_base.d_h != model_dev.d_h:
        raise InvalidInputError(
            f"model shapes differ: ({model_base.dim}, {model_base.d_h}) vs "
            f"({model_dev.dim}, {model_dev.d_h})"
        )
    if not 0.0 <= alpha <= 1.0:
        raise InvalidConfigError(f"alpha must lie in [0, 1], got {alpha}")
    blend = alpha * (model_base.F @ model_base.F.T) + (1.0 - alpha) * (
        model_dev.F @ model_dev.F.T
    )
    vecs, vals = linalg.evd_sym(blend)
    lead = np.maximum(vals[: model_base.d_h], 0.0)
    f_new = vecs[:, : model_base.d_h] * np.sqrt(lead)
    return ht_precompute(model_base.nu, f_new, model_base.W)


def ht_lip(
    model_base: HtPldaModel,
    model_dev: HtPldaModel,
    alpha: float,
    regularize: bool = False,
) -> HtPldaModel:
    """Full HT-PLDA interpolation: blend F F' and W^{-1} with one weight.

    Regularization, when requested, applies to W^{-1} only, with the base
    model as the reference.
    """
    partial = ht_lip_f(model_base, model_dev, alpha)
    dev_winv = linalg.inv_spd(model_dev.W, name="dev W")
    adapted = ht_adapt_w(model_base, dev_winv, alpha, regularize=regularize)
    return ht_precompute(model_base.nu, partial.F, adapted.W)


@dataclass(frozen=True)
class AdaptInputs:
    """Everything a plan might need: models plus domain covariance statistics."""

    model_ood: GPldaModel | HtPldaModel | None = None
    model_ind: GPldaModel | HtPldaModel | None = None
    c_o: np.ndarray | None = None
    c_i: np.ndarray | None = None
    ind_mean: np.ndarray | None = None


def _require(value, what: str, method: str):
    if value is None:
        raise InvalidConfigError(f"method {method!r} requires {what}")
    return value


def apply_plan(plan: AdaptPlan, inputs: AdaptInputs):
    """Dispatch one validated plan onto the supplied models/statistics.

    Returns the adapted model.  When in-domain data was supplied (``ind_mean``
    set) the adapted G-PLDA mean is replaced by the in-domain empirical mean;
    interpolation methods otherwise keep the base model's mean and transforms
    carry the conjugated one.
    """
    plan.validate()
    m = plan.method
    out = None
    if m == "lip" or m == "lip_reg":
        base = _require(inputs.model_ind, "an in-domain base model", m)
        dev = _require(inputs.model_ood, "an out-of-domain developer model", m)
        if isinstance(base, HtPldaModel):
            out = ht_lip(base, dev, plan.alpha, regularize=plan.regularize or m == "lip_reg")
        else:
            out = lip(base, dev, plan.alpha, regularize=plan.regularize or m == "lip_reg")
    elif m == "cip" or m == "cip_reg":
        base = _require(inputs.model_ind, "an in-domain base model", m)
        ood = _require(inputs.model_ood, "an out-of-domain model", m)
        c_o = _require(inputs.c_o, "the out-of-domain total covariance", m)
        c_i = _require(inputs.c_i, "the in-domain total covariance", m)
        reg = plan.regularize or m == "cip_reg"
        if isinstance(base, HtPldaModel):
            pseudo = conjugate_model(ood, coral_transform(c_o, c_i))
            out = ht_lip(base, pseudo, plan.alpha, regularize=reg)
        else:
            pseudo = coral_model(ood, c_o, c_i)
            out = lip(base, pseudo, plan.alpha, regularize=reg)
    elif m == "coral":
        ood = _require(inputs.model_ood, "an out-of-domain model", m)
        c_o = _require(inputs.c_o, "the out-of-domain total covariance", m)
        c_i = _require(inputs.c_i, "the in-domain total covariance", m)
        out = conjugate_model(ood, coral_transform(c_o, c_i))
    elif m == "fda":
        ood = _require(inputs.model_ood, "an out-of-domain model", m)
        c_o = _require(inputs.c_o, "the out-of-domain total covariance", m)
        c_i = _require(inputs.c_i, "the in-domain total covariance", m)
        out = conjugate_model(ood, fda_transform(c_o, c_i, regularize=plan.fda_regularize))
    elif m == "kaldi_star":
        ood = _require(inputs.model_ood, "an out-of-domain model", m)
        c_i = _require(inputs.c_i, "the in-domain total covariance", m)
        if isinstance(ood, HtPldaModel):
            winv = linalg.inv_spd(ood.W, name="W")
            a = fda_transform(ood.F @ ood.F.T + winv, c_i, regularize=True)
        else:
            a = kaldi_star_transform(ood, c_i)
        out = conjugate_model(ood, a)
    elif m == "kaldi":
        ood = _require(inputs.model_ood, "an out-of-domain model", m)
        c_i = _require(inputs.c_i, "the in-domain total covariance", m)
        out = kaldi_adapt(ood, c_i, plan.beta_b, plan.beta_w)
    elif m == "coral_plus":
        ood = _require(inputs.model_ood, "an out-of-domain model", m)
        c_i = _require(inputs.c_i, "the in-domain total covariance", m)
        out = coral_plus(ood, c_i, plan.gamma_b, plan.gamma_w)
    elif m == "ht_w":
        base = _require(inputs.model_ood, "a base HT-PLDA model", m)
        if not isinstance(base, HtPldaModel):
            raise InvalidConfigError("ht-w adapts HT-PLDA models only")
        c_o = _require(inputs.c_o, "the out-of-domain total covariance", m)
        c_i = _require(inputs.c_i, "the in-domain total covariance", m)
        a = coral_transform(c_o, c_i)
        winv = linalg.inv_spd(base.W, name="W")
        dev_winv = a @ winv @ a.T
        out = ht_adapt_w(base, dev_winv, plan.alpha, regularize=plan.regularize)
    else:
        raise InvalidConfigError(
            f"method {m!r} has no direct model-level dispatch; "
            "use generalized_adapt on covariances"
        )
    if inputs.ind_mean is not None and isinstance(out, GPldaModel):
        out = replace(out, mu=np.asarray(inputs.ind_mean, dtype=np.float64))
    return out
