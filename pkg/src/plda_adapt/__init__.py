"""PLDA back-end scoring and covariance-based domain adaptation toolkit."""

from .adapt import (
    AdaptInputs,
    AdaptPlan,
    apply_plan,
    conjugate_model,
    coral_model,
    coral_plus,
    coral_transform,
    fda_transform,
    generalized_adapt,
    ht_adapt_w,
    ht_lip,
    ht_lip_f,
    kaldi_adapt,
    kaldi_star_transform,
    lip,
)
from .dataset import (
    EmbeddingSet,
    Preprocessor,
    apply_transform,
    center,
    fit_lda,
    length_normalize,
    read_embeddings_csv,
    write_embeddings_csv,
)
from .errors import (
    InsufficientDataError,
    InvalidConfigError,
    InvalidInputError,
    PldaAdaptError,
    SingularMatrixError,
)
from .gplda import GPldaModel, gplda_llr, train_gplda
from .htplda import HtPldaModel, UttStats, ht_init, ht_llr, ht_precompute, ht_utt_stats
from .linalg import (
    SimDiagResult,
    empirical_total_cov,
    evd_sym,
    gamma_max,
    sim_diag,
    sim_diag_excess,
    spd_power,
)
from .metrics import (
    Metrics,
    TrialSet,
    compute_eer,
    compute_metrics,
    compute_min_dcf,
    det_points,
    score_trials,
    weight_sweep,
)
from .synth import (
    DomainShift,
    DomainSpec,
    apply_domain_shift,
    gen_gplda,
    gen_htplda,
    make_bench_small,
    make_trials,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
