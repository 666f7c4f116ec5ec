"""Command-line front door: synth -> train -> adapt -> score -> eval -> sweep -> bench.

Every subcommand accepts ``--config FILE`` (JSON) plus flag overrides, with
flags taking precedence.  Produced files embed a hash of the effective
configuration: JSON files carry a ``config_hash`` key, CSV files a leading
``# config_hash=...`` comment.  Exit codes: 0 success, 2 configuration
error, 3 data error, 4 numerical failure.  ``PLDA_ADAPT_THREADS`` caps
within-stage parallelism (applied to the BLAS pool when threadpoolctl is
importable; the stages themselves are sequential).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import adapt, linalg, synth
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
    SingularMatrixError,
)
from .gplda import GPldaModel, train_gplda
from .htplda import HtPldaModel, ht_init
from .metrics import Metrics, TrialSet, compute_metrics, det_points, score_trials, weight_sweep

# Weights used by the bench matrix; interpolations run at the midpoint.
BENCH_ALPHA = 0.5
BENCH_KALDI_BETAS = (0.2, 0.6)
BENCH_CORAL_PLUS_GAMMAS = (1.0, 1.0)
BENCH_SWEEP_GRID = tuple(round(0.1 * k, 1) for k in range(11))
BENCH_METHODS = ("coral", "fda", "coral+", "kaldi", "kaldi*", "lip", "cip")


def config_hash(payload: dict) -> str:
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def apply_thread_cap() -> int | None:
    """Honor PLDA_ADAPT_THREADS by capping the BLAS thread pool if possible."""
    raw = os.environ.get("PLDA_ADAPT_THREADS")
    if not raw:
        return None
    try:
        cap = int(raw)
    except ValueError:
        raise InvalidConfigError(f"PLDA_ADAPT_THREADS must be an integer, got {raw!r}") from None
    if cap < 1:
        raise InvalidConfigError(f"PLDA_ADAPT_THREADS must be >= 1, got {cap}")
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(limits=cap)
    except ImportError:
        pass
    return cap


# ---------------------------------------------------------------------------
# File formats owned by the CLI: trials, scores, metrics, DET, sweep tables.
# ---------------------------------------------------------------------------


def write_json_file(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def write_trials_csv(trials: TrialSet, path, *, hash_comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if hash_comment:
            fh.write(f"# config_hash={hash_comment}\n")
        writer = csv.writer(fh)
        writer.writerow(["enroll", "test", "label"])
        labels = trials.labels
        for k, (e, t) in enumerate(trials.pairs):
            lab = "" if labels is None else ("target" if labels[k] else "nontarget")
            writer.writerow([e, t, lab])


def read_trials_csv(path) -> TrialSet:
    pairs: list[tuple[str, str]] = []
    labels: list[bool] = []
    seen_label = False
    with open(path, newline="") as fh:
        lines = (ln for ln in fh if not ln.startswith("#"))
        reader = csv.reader(lines)
        header = next(reader, None)
        if header is None or header[:2] != ["enroll", "test"]:
            raise InvalidInputError(f"{path}: expected header 'enroll,test,label'")
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) not in (2, 3):
                raise InvalidInputError(f"{path}:{lineno}: expected 2 or 3 fields")
            pairs.append((rec[0], rec[1]))
            lab = rec[2] if len(rec) == 3 else ""
            if lab == "target":
                labels.append(True)
                seen_label = True
            elif lab == "nontarget":
                labels.append(False)
                seen_label = True
            elif lab == "":
                labels.append(False)
            else:
                raise InvalidInputError(
                    f"{path}:{lineno}: label must be 'target', 'nontarget', or empty"
                )
    if not pairs:
        raise InvalidInputError(f"{path}: no trial pairs")
    return TrialSet(pairs=tuple(pairs), labels=tuple(labels) if seen_label else None)


def write_scores_csv(trials: TrialSet, scores, path, *, hash_comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if hash_comment:
            fh.write(f"# config_hash={hash_comment}\n")
        writer = csv.writer(fh)
        writer.writerow(["enroll", "test", "score"])
        for (e, t), s in zip(trials.pairs, scores):
            writer.writerow([e, t, repr(float(s))])


def read_scores_csv(path) -> dict[tuple[str, str], float]:
    out: dict[tuple[str, str], float] = {}
    with open(path, newline="") as fh:
        lines = (ln for ln in fh if not ln.startswith("#"))
        reader = csv.reader(lines)
        header = next(reader, None)
        if header != ["enroll", "test", "score"]:
            raise InvalidInputError(f"{path}: expected header 'enroll,test,score'")
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != 3:
                raise InvalidInputError(f"{path}:{lineno}: expected 3 fields")
            out[(rec[0], rec[1])] = float(rec[2])
    if not out:
        raise InvalidInputError(f"{path}: no scores")
    return out


def write_det_csv(points: np.ndarray, path, *, hash_comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if hash_comment:
            fh.write(f"# config_hash={hash_comment}\n")
        writer = csv.writer(fh)
        writer.writerow(["threshold", "p_miss", "p_fa"])
        for thr, pm, pfa in points:
            writer.writerow([repr(float(thr)), repr(float(pm)), repr(float(pfa))])


def write_sweep_csv(rows, path, *, hash_comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if hash_comment:
            fh.write(f"# config_hash={hash_comment}\n")
        writer = csv.writer(fh)
        writer.writerow(["alpha", "eer", "minc_primary"])
        for r in rows:
            writer.writerow([repr(float(r.alpha)), repr(float(r.eer)), repr(float(r.minc_primary))])


def load_model(path):
    """Load a model JSON file, dispatching on its declared type."""
    with open(path) as fh:
        payload = json.load(fh)
    kind = payload.get("type")
    if kind == "gplda":
        return GPldaModel.from_dict(payload)
    if kind == "htplda":
        return HtPldaModel.from_dict(payload)
    raise InvalidInputError(f"{path}: unknown model type {kind!r}")


def _require_file(path, what: str) -> Path:
    if path is None:
        raise InvalidConfigError(f"missing required input: {what}")
    p = Path(path)
    if not p.exists():
        raise InvalidInputError(f"{what} not found: {p}")
    return p


# ---------------------------------------------------------------------------
# The experiment pipeline.
# ---------------------------------------------------------------------------


@dataclass
class ExperimentConfig:
    """One synth->preprocess->train->adapt->score->eval run.

    When the embedding/trial paths are unset, the seeded bench-small data is
    generated in place.  ``method`` is a CLI method name, or ``ood``/``ind``
    for the unadapted single-model baselines.
    """

    seed: int
    method: str = "ood"
    backend: str = "gplda"
    alpha: float = BENCH_ALPHA
    beta_b: float = BENCH_KALDI_BETAS[0]
    beta_w: float = BENCH_KALDI_BETAS[1]
    gamma_b: float = BENCH_CORAL_PLUS_GAMMAS[0]
    gamma_w: float = BENCH_CORAL_PLUS_GAMMAS[1]
    regularize: bool = False
    fda_regularize: bool = True
    nu: float = 2.0
    d_h: int | None = None
    center_source: str = "domain"
    lda_dim: int | None = None
    lda_source: str = "raw"
    length_norm: bool = False
    out_dir: str | None = None
    ood_embeddings: str | None = None
    ind_embeddings: str | None = None
    eval_embeddings: str | None = None
    trials: str | None = None

    def validate(self) -> "ExperimentConfig":
        if self.backend not in ("gplda", "htplda"):
            raise InvalidConfigError(f"backend must be gplda or htplda, got {self.backend!r}")
        if self.method not in ("ood", "ind") and self.method not in adapt.CLI_METHOD_NAMES:
            raise InvalidConfigError(
                f"unknown method {self.method!r}; expected ood, ind, or one of "
                f"{sorted(adapt.CLI_METHOD_NAMES)}"
            )
        if self.center_source not in ("domain", "none"):
            raise InvalidConfigError(
                f"center_source must be 'domain' or 'none', got {self.center_source!r}"
            )
        if self.lda_source not in ("raw", "adapted"):
            raise InvalidConfigError(
                f"lda_source must be 'raw' or 'adapted', got {self.lda_source!r}"
            )
        if self.backend == "htplda" and self.lda_dim is not None:
            raise InvalidConfigError("LDA is not supported on the htplda backend")
        if self.method in adapt.CLI_METHOD_NAMES:
            self.plan()  # validates weights
        paths = (self.ood_embeddings, self.ind_embeddings, self.eval_embeddings, self.trials)
        if any(p is not None for p in paths):
            for p, what in zip(
                paths, ("ood_embeddings", "ind_embeddings", "eval_embeddings", "trials")
            ):
                _require_file(p, what)
        return self

    def plan(self) -> adapt.AdaptPlan:
        return adapt.AdaptPlan.from_cli_name(
            self.method,
            alpha=self.alpha,
            beta_b=self.beta_b,
            beta_w=self.beta_w,
            gamma_b=self.gamma_b,
            gamma_w=self.gamma_w,
            regularize=self.regularize,
            fda_regularize=self.fda_regularize,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise InvalidConfigError(f"unknown config fields: {sorted(unknown)}")
        if "seed" not in d:
            raise InvalidConfigError("config requires a seed")
        return cls(**d)


@dataclass
class PipelineResult:
    metrics: Metrics
    model: object
    files: dict = field(default_factory=dict)


def _load_pipeline_data(cfg: ExperimentConfig):
    if cfg.ood_embeddings is not None:
        ood = read_embeddings_csv(cfg.ood_embeddings)
        ind = read_embeddings_csv(cfg.ind_embeddings)
        evl = read_embeddings_csv(cfg.eval_embeddings)
        trials = read_trials_csv(cfg.trials)
        if trials.labels is None:
            raise InvalidInputError("pipeline evaluation requires labeled trials")
        return ood, ind, evl, trials
    bench = synth.make_bench_small(cfg.seed)
    return bench.ood, bench.ind, bench.eval, bench.trials


def _train(cfg: ExperimentConfig, x: EmbeddingSet):
    if cfg.backend == "htplda":
        return ht_init(x, nu=cfg.nu, d_h=cfg.d_h)
    return train_gplda(x)


def run_pipeline(cfg: ExperimentConfig) -> PipelineResult:
    """Execute one experiment end to end; deterministic under a fixed config."""
    cfg.validate()
    ood, ind, evl, trials = _load_pipeline_data(cfg)

    if cfg.center_source == "domain":
        ood_p = center(ood, ood.mean())
        ind_mean = ind.mean()
        ind_p = center(ind, ind_mean)
        evl_p = center(evl, ind_mean)
    else:
        ood_p, ind_p, evl_p = ood, ind, evl

    needs_ind_model = cfg.method in ("ind", "lip", "cip", "lip-reg", "cip-reg")
    embedding_level = (
        cfg.lda_dim is not None and cfg.method in ("coral", "fda") and cfg.backend == "gplda"
    )

    transform = None
    if embedding_level:
        c_o_raw = linalg.empirical_total_cov(ood_p)
        c_i_raw = linalg.empirical_total_cov(ind_p)
        if cfg.method == "coral":
            transform = adapt.coral_transform(c_o_raw, c_i_raw)
        else:
            transform = adapt.fda_transform(c_o_raw, c_i_raw, regularize=cfg.fda_regularize)
        ood_t = apply_transform(transform, ood_p)

    if cfg.lda_dim is not None:
        if embedding_level:
            lda_fit_set = ood_t if cfg.lda_source == "adapted" else ood_p
        elif needs_ind_model:
            lda_fit_set = ind_p
        else:
            lda_fit_set = ood_p
        lda = fit_lda(lda_fit_set, cfg.lda_dim)
        ood_p = apply_transform(lda, ood_p)
        ind_p = apply_transform(lda, ind_p)
        evl_p = apply_transform(lda, evl_p)
        if embedding_level:
            ood_t = apply_transform(lda, ood_t)

    if cfg.length_norm:
        ood_p = length_normalize(ood_p)
        ind_p = length_normalize(ind_p)
        evl_p = length_normalize(evl_p)
        if embedding_level:
            ood_t = length_normalize(ood_t)

    if cfg.method == "ood":
        adapted = _train(cfg, ood_p)
    elif cfg.method == "ind":
        adapted = _train(cfg, ind_p)
    elif embedding_level:
        adapted = _train(cfg, ood_t)
    else:
        model_ood = _train(cfg, ood_p)
        model_ind = _train(cfg, ind_p) if needs_ind_model else None
        inputs = adapt.AdaptInputs(
            model_ood=model_ood,
            model_ind=model_ind,
            c_o=linalg.empirical_total_cov(ood_p),
            c_i=linalg.empirical_total_cov(ind_p),
            ind_mean=ind_p.mean(),
        )
        adapted = adapt.apply_plan(cfg.plan(), inputs)

    scores = score_trials(adapted, evl_p, trials)
    labels = trials.require_labels()
    result = compute_metrics(scores, labels)

    files: dict = {}
    if cfg.out_dir is not None:
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        h = config_hash({"command": "run", **cfg.to_dict()})
        model_path = out / "adapted_model.json"
        adapted.save(model_path, extra={"config_hash": h})
        scores_path = out / "scores.csv"
        write_scores_csv(trials, scores, scores_path, hash_comment=h)
        metrics_path = out / "metrics.json"
        write_json_file(metrics_path, {**result.to_dict(), "config_hash": h})
        det_path = out / "det.csv"
        write_det_csv(det_points(scores, labels), det_path, hash_comment=h)
        files = {
            "model": str(model_path),
            "scores": str(scores_path),
            "metrics": str(metrics_path),
            "det": str(det_path),
        }
    return PipelineResult(metrics=result, model=adapted, files=files)


def run_bench(seed: int = synth.DEFAULT_BENCH_SEED) -> dict:
    """The full benchmark matrix: baselines, every adaptation method,
    interpolation-weight sweeps, and the heavy-tailed back-end comparison."""
    bench = synth.make_bench_small(seed)
    ood_p = center(bench.ood, bench.ood.mean())
    ind_mean = bench.ind.mean()
    ind_p = center(bench.ind, ind_mean)
    evl_p = center(bench.eval, ind_mean)
    labels = bench.trials.require_labels()

    model_ood = train_gplda(ood_p)
    model_ind = train_gplda(ind_p)
    c_o = linalg.empirical_total_cov(ood_p)
    c_i = linalg.empirical_total_cov(ind_p)

    def evaluate(model) -> dict:
        return compute_metrics(score_trials(model, evl_p, bench.trials), labels).to_dict()

    gplda_results = {"ood": evaluate(model_ood), "ind": evaluate(model_ind)}
    inputs = adapt.AdaptInputs(
        model_ood=model_ood, model_ind=model_ind, c_o=c_o, c_i=c_i, ind_mean=ind_p.mean()
    )
    for name in BENCH_METHODS:
        plan = adapt.AdaptPlan.from_cli_name(
            name,
            alpha=BENCH_ALPHA,
            beta_b=BENCH_KALDI_BETAS[0],
            beta_w=BENCH_KALDI_BETAS[1],
            gamma_b=BENCH_CORAL_PLUS_GAMMAS[0],
            gamma_w=BENCH_CORAL_PLUS_GAMMAS[1],
        )
        gplda_results[name] = evaluate(adapt.apply_plan(plan, inputs))

    pseudo = adapt.coral_model(model_ood, c_o, c_i)
    sweeps = {}
    for name, dev, reg in (
        ("lip", model_ood, False),
        ("lip-reg", model_ood, True),
        ("cip", pseudo, False),
        ("cip-reg", pseudo, True),
    ):
        rows = weight_sweep(model_ind, dev, evl_p, bench.trials, BENCH_SWEEP_GRID, regularize=reg)
        mincs = np.array([r.minc_primary for r in rows])
        sweeps[name] = {
            "points": [
                {"alpha": r.alpha, "eer": r.eer, "minc_primary": r.minc_primary} for r in rows
            ],
            "std_minc": float(mincs.std()),
            "max_minc": float(mincs.max()),
        }

    heavy = synth.make_bench_heavy(seed)
    mu = heavy.train.mean()
    tr_p = center(heavy.train, mu)
    ev_p = center(heavy.eval, mu)
    hlabels = heavy.trials.require_labels()
    m_g = train_gplda(tr_p)
    m_h = ht_init(tr_p, nu=heavy.nu, d_h=synth.BENCH_HT_DH)
    heavy_results = {
        "gplda": compute_metrics(score_trials(m_g, ev_p, heavy.trials), hlabels).to_dict(),
        "htplda": compute_metrics(score_trials(m_h, ev_p, heavy.trials), hlabels).to_dict(),
    }

    payload = {
        "seed": seed,
        "alpha": BENCH_ALPHA,
        "kaldi_betas": list(BENCH_KALDI_BETAS),
        "coral_plus_gammas": list(BENCH_CORAL_PLUS_GAMMAS),
        "gplda": gplda_results,
        "sweeps": sweeps,
        "heavy_tail": heavy_results,
    }
    payload["config_hash"] = config_hash({"command": "bench", "seed": seed})
    return payload


# ---------------------------------------------------------------------------
# Subcommands.
# ---------------------------------------------------------------------------


def _merged(args: argparse.Namespace, required: tuple[str, ...] = ()) -> dict:
    """Config-file values overridden by explicitly-set CLI flags."""
    base: dict = {}
    if getattr(args, "config", None):
        with open(_require_file(args.config, "config file")) as fh:
            try:
                base = json.load(fh)
            except json.JSONDecodeError as exc:
                raise InvalidInputError(f"{args.config}: invalid JSON ({exc})") from exc
        if not isinstance(base, dict):
            raise InvalidInputError(f"{args.config}: config must be a JSON object")
    merged = dict(base)
    for key, value in vars(args).items():
        if key in ("func", "config"):
            continue
        if value is not None:
            merged[key] = value
    for key in required:
        if merged.get(key) is None:
            raise InvalidConfigError(f"missing required option: --{key.replace('_', '-')}")
    return merged


def cmd_synth(args) -> None:
    cfg = _merged(args, required=("seed", "out_dir"))
    seed = int(cfg["seed"])
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    h = config_hash({"command": "synth", **{k: cfg.get(k) for k in sorted(cfg)}})
    kind = cfg.get("kind", "bench")
    if kind == "bench":
        bench = synth.make_bench_small(seed)
        write_embeddings_csv(bench.ood, out / "ood.csv", comments=(f"config_hash={h}",))
        write_embeddings_csv(bench.ind, out / "ind.csv", comments=(f"config_hash={h}",))
        write_embeddings_csv(bench.eval, out / "eval.csv", comments=(f"config_hash={h}",))
        write_trials_csv(bench.trials, out / "trials.csv", hash_comment=h)
        write_json_file(out / "bench.json", {**bench.provenance(), "config_hash": h})
        print(f"wrote bench-small (seed={seed}) to {out}")
    elif kind == "bench-heavy":
        heavy = synth.make_bench_heavy(seed)
        write_embeddings_csv(heavy.train, out / "train.csv", comments=(f"config_hash={h}",))
        write_embeddings_csv(heavy.eval, out / "eval.csv", comments=(f"config_hash={h}",))
        write_trials_csv(heavy.trials, out / "trials.csv", hash_comment=h)
        write_json_file(
            out / "bench.json", {"seed": seed, "nu": heavy.nu, "config_hash": h}
        )
        print(f"wrote bench-heavy (seed={seed}) to {out}")
    elif kind == "spec":
        spec_path = cfg.get("spec")
        if spec_path is None:
            raise InvalidConfigError("kind=spec requires --spec pointing to a domain spec JSON")
        spec = synth.load_spec(_require_file(spec_path, "domain spec"))
        spec = synth.DomainSpec.from_dict({**spec.to_dict(), "seed": seed})
        data = synth.gen_htplda(spec) if spec.F is not None else synth.gen_gplda(spec)
        write_embeddings_csv(data, out / "embeddings.csv", comments=(f"config_hash={h}",))
        n_target = cfg.get("n_target")
        n_nontarget = cfg.get("n_nontarget")
        if n_target is not None and n_nontarget is not None:
            trials = synth.make_trials(data, int(n_target), int(n_nontarget), seed + 1)
            write_trials_csv(trials, out / "trials.csv", hash_comment=h)
        write_json_file(out / "spec.json", {**spec.to_dict(), "config_hash": h})
        print(f"wrote synthetic set (seed={seed}) to {out}")
    else:
        raise InvalidConfigError(f"unknown synth kind {kind!r}; expected bench, bench-heavy, or spec")


def cmd_train(args) -> None:
    cfg = _merged(args, required=("embeddings", "out"))
    data = read_embeddings_csv(_require_file(cfg["embeddings"], "embeddings"))
    h = config_hash({"command": "train", **{k: cfg.get(k) for k in sorted(cfg)}})
    center_mode = cfg.get("center", "self")
    if center_mode not in ("self", "none"):
        raise InvalidConfigError(f"center must be 'self' or 'none', got {center_mode!r}")
    mean = data.mean() if center_mode == "self" else np.zeros(data.dim)
    lda = None
    lda_dim = cfg.get("lda_dim")
    if lda_dim is not None:
        lda = fit_lda(center(data, mean), int(lda_dim))
    prep = Preprocessor(mean=mean, lda=lda, length_norm=bool(cfg.get("length_norm", False)))
    processed = prep.apply(data)
    backend = cfg.get("backend", "gplda")
    if backend == "gplda":
        model = train_gplda(processed)
    elif backend == "htplda":
        d_h = cfg.get("d_h")
        model = ht_init(processed, nu=float(cfg.get("nu", 2.0)), d_h=None if d_h is None else int(d_h))
    else:
        raise InvalidConfigError(f"backend must be gplda or htplda, got {backend!r}")
    model.save(cfg["out"], extra={"config_hash": h})
    if cfg.get("preproc_out"):
        write_json_file(cfg["preproc_out"], {**prep.to_dict(), "config_hash": h})
    print(f"trained {backend} model on {processed.n} embeddings -> {cfg['out']}")


def _load_preprocessor(path) -> Preprocessor:
    with open(path) as fh:
        payload = json.load(fh)
    return Preprocessor.from_dict(payload)


def _load_covariance_inputs(cfg) -> tuple[np.ndarray | None, np.ndarray | None, np.ndarray | None]:
    """Total covariances (and in-domain mean) from embedding files, preprocessed
    identically to the models they will adapt."""
    prep = _load_preprocessor(_require_file(cfg["preproc"], "preprocessor")) if cfg.get("preproc") else None

    def stats(path_key):
        if not cfg.get(path_key):
            return None, None
        data = read_embeddings_csv(_require_file(cfg[path_key], path_key))
        if prep is not None:
            data = prep.apply(data)
        return linalg.empirical_total_cov(data), data.mean()

    c_o, _ = stats("ood_embeddings")
    c_i, ind_mean = stats("ind_embeddings")
    return c_o, c_i, ind_mean


def cmd_adapt(args) -> None:
    cfg = _merged(args, required=("method", "out"))
    method = cfg["method"]
    if method not in adapt.CLI_METHOD_NAMES:
        raise InvalidConfigError(
            f"unknown method {method!r}; expected one of {sorted(adapt.CLI_METHOD_NAMES)}"
        )
    h = config_hash({"command": "adapt", **{k: cfg.get(k) for k in sorted(cfg)}})
    plan = adapt.AdaptPlan.from_cli_name(
        method,
        alpha=float(cfg.get("alpha", BENCH_ALPHA)),
        beta_b=None if cfg.get("beta_b") is None else float(cfg["beta_b"]),
        beta_w=None if cfg.get("beta_w") is None else float(cfg["beta_w"]),
        gamma_b=float(cfg.get("gamma_b", BENCH_CORAL_PLUS_GAMMAS[0])),
        gamma_w=float(cfg.get("gamma_w", BENCH_CORAL_PLUS_GAMMAS[1])),
        regularize=bool(cfg.get("regularize", False)),
        fda_regularize=not bool(cfg.get("fda_unregularized", False)),
    )
    c_o, c_i, ind_mean = _load_covariance_inputs(cfg)
    model_ood = load_model(_require_file(cfg.get("model_ood"), "model_ood")) if cfg.get("model_ood") else None
    model_ind = load_model(_require_file(cfg.get("model_base"), "model_base")) if cfg.get("model_base") else None
    if plan.method in ("lip", "lip_reg") and model_ood is None and cfg.get("model_dev"):
        model_ood = load_model(_require_file(cfg["model_dev"], "model_dev"))
    inputs = adapt.AdaptInputs(
        model_ood=model_ood, model_ind=model_ind, c_o=c_o, c_i=c_i, ind_mean=ind_mean
    )
    adapted = adapt.apply_plan(plan, inputs)
    adapted.save(cfg["out"], extra={"config_hash": h})
    print(f"adapted model ({method}) -> {cfg['out']}")


def cmd_score(args) -> None:
    cfg = _merged(args, required=("model", "embeddings", "trials", "out"))
    model = load_model(_require_file(cfg["model"], "model"))
    data = read_embeddings_csv(_require_file(cfg["embeddings"], "embeddings"))
    if cfg.get("preproc"):
        data = _load_preprocessor(_require_file(cfg["preproc"], "preprocessor")).apply(data)
    trials = read_trials_csv(_require_file(cfg["trials"], "trials"))
    h = config_hash({"command": "score", **{k: cfg.get(k) for k in sorted(cfg)}})
    scores = score_trials(model, data, trials)
    write_scores_csv(trials, scores, cfg["out"], hash_comment=h)
    print(f"scored {len(trials)} trials -> {cfg['out']}")


def cmd_eval(args) -> None:
    cfg = _merged(args, required=("scores", "trials", "out"))
    score_map = read_scores_csv(_require_file(cfg["scores"], "scores"))
    trials = read_trials_csv(_require_file(cfg["trials"], "trials"))
    labels = trials.require_labels()
    try:
        scores = np.array([score_map[pair] for pair in trials.pairs])
    except KeyError as exc:
        raise InvalidInputError(f"scores file missing trial pair {exc.args[0]}") from exc
    h = config_hash({"command": "eval", **{k: cfg.get(k) for k in sorted(cfg)}})
    result = compute_metrics(scores, labels)
    write_json_file(cfg["out"], {**result.to_dict(), "config_hash": h})
    if cfg.get("det"):
        write_det_csv(det_points(scores, labels), cfg["det"], hash_comment=h)
    print(
        f"eer={result.eer:.4f} minc_primary={result.minc_primary:.4f} "
        f"({result.n_target} target / {result.n_nontarget} nontarget) -> {cfg['out']}"
    )


def cmd_sweep(args) -> None:
    cfg = _merged(args, required=("model_base", "model_dev", "embeddings", "trials", "grid", "out"))
    base = load_model(_require_file(cfg["model_base"], "model_base"))
    dev = load_model(_require_file(cfg["model_dev"], "model_dev"))
    data = read_embeddings_csv(_require_file(cfg["embeddings"], "embeddings"))
    if cfg.get("preproc"):
        data = _load_preprocessor(_require_file(cfg["preproc"], "preprocessor")).apply(data)
    trials = read_trials_csv(_require_file(cfg["trials"], "trials"))
    grid_raw = cfg["grid"]
    grid = [float(v) for v in (grid_raw.split(",") if isinstance(grid_raw, str) else grid_raw)]
    h = config_hash({"command": "sweep", **{k: cfg.get(k) for k in sorted(cfg)}})
    rows = weight_sweep(base, dev, data, trials, grid, regularize=bool(cfg.get("regularize", False)))
    write_sweep_csv(rows, cfg["out"], hash_comment=h)
    print(f"swept {len(rows)} weights -> {cfg['out']}")


def cmd_bench(args) -> None:
    cfg = _merged(args, required=("out_dir",))
    seed = int(cfg.get("seed", synth.DEFAULT_BENCH_SEED))
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    payload = run_bench(seed)
    write_json_file(out / "bench_results.json", payload)
    print(f"bench matrix (seed={seed}) -> {out / 'bench_results.json'}")
    for name, res in payload["gplda"].items():
        print(f"  gplda {name:8s} eer={res['eer']:.4f} minc_primary={res['minc_primary']:.4f}")
    for name, res in payload["heavy_tail"].items():
        print(f"  heavy {name:8s} eer={res['eer']:.4f}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plda-adapt",
        description="PLDA back-end scoring and covariance domain adaptation toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate seeded synthetic embeddings and trials")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--kind", choices=["bench", "bench-heavy", "spec"])
    p.add_argument("--spec", help="domain spec JSON (kind=spec)")
    p.add_argument("--n-target", dest="n_target", type=int)
    p.add_argument("--n-nontarget", dest="n_nontarget", type=int)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a PLDA back-end from embeddings")
    p.add_argument("--config")
    p.add_argument("--embeddings")
    p.add_argument("--backend", choices=["gplda", "htplda"])
    p.add_argument("--out")
    p.add_argument("--preproc-out", dest="preproc_out")
    p.add_argument("--center", choices=["self", "none"])
    p.add_argument("--lda-dim", dest="lda_dim", type=int)
    p.add_argument("--length-norm", dest="length_norm", action="store_true", default=None)
    p.add_argument("--nu", type=float)
    p.add_argument("--d-h", dest="d_h", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("adapt", help="adapt a trained model to a new domain")
    p.add_argument("--config")
    p.add_argument("--method", choices=sorted(adapt.CLI_METHOD_NAMES))
    p.add_argument("--out")
    p.add_argument("--model-ood", dest="model_ood", help="out-of-domain model JSON")
    p.add_argument("--model-base", dest="model_base", help="in-domain base model JSON (lip/cip)")
    p.add_argument("--model-dev", dest="model_dev", help="developer model JSON (alias for --model-ood in lip)")
    p.add_argument("--ood-embeddings", dest="ood_embeddings")
    p.add_argument("--ind-embeddings", dest="ind_embeddings")
    p.add_argument("--preproc")
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta-b", dest="beta_b", type=float)
    p.add_argument("--beta-w", dest="beta_w", type=float)
    p.add_argument("--gamma-b", dest="gamma_b", type=float)
    p.add_argument("--gamma-w", dest="gamma_w", type=float)
    p.add_argument("--regularize", action="store_true", default=None)
    p.add_argument("--fda-unregularized", dest="fda_unregularized", action="store_true", default=None)
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("score", help="score trials with a model")
    p.add_argument("--config")
    p.add_argument("--model")
    p.add_argument("--embeddings")
    p.add_argument("--trials")
    p.add_argument("--preproc")
    p.add_argument("--out")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="compute EER/minDCF metrics from scores")
    p.add_argument("--config")
    p.add_argument("--scores")
    p.add_argument("--trials")
    p.add_argument("--out")
    p.add_argument("--det", help="also write DET points CSV here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="interpolation weight sweep between two models")
    p.add_argument("--config")
    p.add_argument("--model-base", dest="model_base")
    p.add_argument("--model-dev", dest="model_dev")
    p.add_argument("--embeddings")
    p.add_argument("--trials")
    p.add_argument("--preproc")
    p.add_argument("--grid", help="comma-separated weights, e.g. 0,0.1,...,1")
    p.add_argument("--regularize", action="store_true", default=None)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bench", help="run the full benchmark matrix")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out-dir", dest="out_dir")
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        apply_thread_cap()
        args.func(args)
        return 0
    except InvalidConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (InsufficientDataError, InvalidInputError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except SingularMatrixError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 4
    except np.linalg.LinAlgError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 4
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (json.JSONDecodeError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
