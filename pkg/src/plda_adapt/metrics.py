"""Trial scoring aggregation and detection metrics.

Thresholding convention: a trial is accepted when its score is >= the
threshold.  Candidate thresholds are placed strictly between consecutive
distinct scores, plus -inf (accept everything) and +inf (reject
everything), so ties are handled consistently.  The equal error rate is
read off where the miss and false-alarm staircases cross, linearly
interpolating between the two adjacent operating points that straddle the
crossing; minDCF minimizes the normalized detection cost

    [c_miss * p * P_miss + c_fa * (1 - p) * P_fa] / min(c_miss * p, c_fa * (1 - p))

over the same threshold set.  minC_primary is the exact mean of the
minDCFs at target priors 0.01 and 0.005.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import adapt
from .dataset import EmbeddingSet
from .errors import InsufficientDataError, InvalidConfigError, InvalidInputError
from .gplda import GPldaModel
from .gplda import score_pairs as _gplda_score_pairs
from .htplda import HtPldaModel
from .htplda import score_pairs as _ht_score_pairs

PRIMARY_PRIORS = (0.01, 0.005)


@dataclass(frozen=True)
class TrialSet:
    """Enroll/test id pairs, optionally labeled (True = same speaker)."""

    pairs: tuple[tuple[str, str], ...]
    labels: tuple[bool, ...] | None = None

    def __post_init__(self):
        pairs = tuple((str(e), str(t)) for e, t in self.pairs)
        labels = self.labels
        if labels is not None:
            labels = tuple(bool(v) for v in labels)
            if len(labels) != len(pairs):
                raise InvalidInputError(
                    f"{len(labels)} labels for {len(pairs)} trial pairs"
                )
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.pairs)

    def require_labels(self) -> np.ndarray:
        if self.labels is None:
            raise InvalidInputError("this operation requires labeled trials")
        return np.asarray(self.labels, dtype=bool)


@dataclass(frozen=True)
class Metrics:
    eer: float
    min_dcf_001: float
    min_dcf_0005: float
    minc_primary: float
    n_target: int
    n_nontarget: int

    def to_dict(self) -> dict:
        return {
            "eer": self.eer,
            "min_dcf_001": self.min_dcf_001,
            "min_dcf_0005": self.min_dcf_0005,
            "minc_primary": self.minc_primary,
            "n_target": self.n_target,
            "n_nontarget": self.n_nontarget,
        }


def _validate_scores(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    if s.ndim != 1 or y.shape != s.shape:
        raise InvalidInputError(
            f"scores and labels must be matching vectors, got {s.shape} and {y.shape}"
        )
    if not np.all(np.isfinite(s)):
        raise InvalidInputError("scores contain non-finite values")
    if not y.any() or y.all():
        raise InsufficientDataError(
            "need at least one target and one nontarget score"
        )
    return s, y


def det_points(scores, labels) -> np.ndarray:
    """Operating points as an (n_thresholds, 3) array: threshold, p_miss, p_fa."""
    s, y = _validate_scores(scores, labels)
    tgt = np.sort(s[y])
    non = np.sort(s[~y])
    uniq = np.unique(s)
    thr = np.concatenate(([-np.inf], 0.5 * (uniq[:-1] + uniq[1:]), [np.inf]))
    p_miss = np.searchsorted(tgt, thr, side="left") / tgt.size
    p_fa = 1.0 - np.searchsorted(non, thr, side="left") / non.size
    return np.column_stack([thr, p_miss, p_fa])


def _eer_from_points(p_miss: np.ndarray, p_fa: np.ndarray) -> float:
    diff = p_miss - p_fa
    k = int(np.argmax(diff >= 0.0))
    if diff[k] == 0.0:
        return float(p_miss[k])
    t = diff[k - 1] / (diff[k - 1] - diff[k])
    return float(p_miss[k - 1] + t * (p_miss[k] - p_miss[k - 1]))


def compute_eer(scores, labels) -> float:
    """Equal error rate via threshold sweep with linear crossing interpolation."""
    pts = det_points(scores, labels)
    return _eer_from_points(pts[:, 1], pts[:, 2])


def compute_min_dcf(scores, labels, p_target: float, c_miss: float = 1.0, c_fa: float = 1.0) -> float:
    """Minimum normalized detection cost at a fixed target prior."""
    if not 0.0 < p_target < 1.0:
        raise InvalidConfigError(f"p_target must lie in (0, 1), got {p_target}")
    if c_miss <= 0.0 or c_fa <= 0.0:
        raise InvalidConfigError("costs must be positive")
    pts = det_points(scores, labels)
    cost = c_miss * p_target * pts[:, 1] + c_fa * (1.0 - p_target) * pts[:, 2]
    return float(cost.min() / min(c_miss * p_target, c_fa * (1.0 - p_target)))


def compute_metrics(scores, labels) -> Metrics:
    """EER, the two operating-point minDCFs, and their exact mean."""
    s, y = _validate_scores(scores, labels)
    eer = compute_eer(s, y)
    dcf1 = compute_min_dcf(s, y, PRIMARY_PRIORS[0])
    dcf2 = compute_min_dcf(s, y, PRIMARY_PRIORS[1])
    return Metrics(
        eer=eer,
        min_dcf_001=dcf1,
        min_dcf_0005=dcf2,
        minc_primary=(dcf1 + dcf2) / 2.0,
        n_target=int(y.sum()),
        n_nontarget=int((~y).sum()),
    )


def score_trials(model, x: EmbeddingSet, trials: TrialSet) -> np.ndarray:
    """Score every trial pair against an embedding set, resolving ids to rows."""
    index = {uid: i for i, uid in enumerate(x.ids)}
    try:
        ei = np.fromiter((index[e] for e, _ in trials.pairs), dtype=np.intp, count=len(trials))
        ti = np.fromiter((index[t] for _, t in trials.pairs), dtype=np.intp, count=len(trials))
    except KeyError as exc:
        raise InvalidInputError(f"trial id {exc.args[0]!r} not present in the embedding set") from exc
    if isinstance(model, GPldaModel):
        return _gplda_score_pairs(model, x.X, ei, ti)
    if isinstance(model, HtPldaModel):
        return _ht_score_pairs(model, x.X, ei, ti)
    raise InvalidInputError(f"unsupported model type {type(model).__name__}")


class SweepPoint(NamedTuple):
    alpha: float
    eer: float
    minc_primary: float


def weight_sweep(
    model_base,
    model_dev,
    x: EmbeddingSet,
    trials: TrialSet,
    grid,
    regularize: bool = False,
) -> list[SweepPoint]:
    """Metrics of the base/dev interpolation across a grid of weights.

    Endpoint weights reproduce the single models exactly.  Duplicate grid
    values are rejected up front.
    """
    alphas = [float(a) for a in grid]
    if len(set(alphas)) != len(alphas):
        raise InvalidConfigError("sweep grid contains duplicate alpha values")
    for a in alphas:
        if not 0.0 <= a <= 1.0:
            raise InvalidConfigError(f"sweep alpha {a} outside [0, 1]")
    labels = trials.require_labels()
    rows = []
    for a in alphas:
        if isinstance(model_base, HtPldaModel):
            blended = adapt.ht_lip(model_base, model_dev, a, regularize=regularize)
        else:
            blended = adapt.lip(model_base, model_dev, a, regularize=regularize)
        m = compute_metrics(score_trials(blended, x, trials), labels)
        rows.append(SweepPoint(alpha=a, eer=m.eer, minc_primary=m.minc_primary))
    return rows
