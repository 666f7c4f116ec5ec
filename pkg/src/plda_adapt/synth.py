"""Seeded synthetic embedding generation and controlled domain shift.

Determinism contract
--------------------
All randomness flows through the Philox 4x64 counter-based bit generator
(numpy's implementation) keyed directly with the user seed, drawn as 53-bit
uniform doubles.  Gaussian variates are the inverse normal CDF of those
uniforms (uniforms clipped below at 2^-54); gamma variates use the
Marsaglia-Tsang squeeze, vectorized per rejection round: each round draws
one normal for every still-pending slot (in slot order) and then one
uniform for every still-pending slot, and for shape < 1 the boost uniforms
for all slots are drawn as one final batch.  Draw order per dataset:

* Gaussian model: all speaker offsets as an (S, D) row-major block, then
  all within-speaker noise as an (S, U, D) row-major block.
* Heavy-tailed model: speaker factors (S, d_h) row-major, then all N
  precision scales via the gamma sampler, then noise (N, D) row-major.

An optional affine shift ``row -> A row + offset`` is applied afterwards,
so the shifted domain's covariances are known in closed form.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .dataset import EmbeddingSet
from .errors import (
    InsufficientDataError,
    InvalidConfigError,
    InvalidInputError,
    SingularMatrixError,
)
from .metrics import TrialSet

_MIN_UNIFORM = 2.0**-54


class SeededStream:
    """Philox-backed draws with the pinned uniform/normal/gamma recipes."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.Philox(key=self.seed))

    def uniform(self, n: int) -> np.ndarray:
        return np.maximum(self._gen.random(int(n)), _MIN_UNIFORM)

    def normal(self, shape) -> np.ndarray:
        size = int(np.prod(shape))
        return ndtri(self.uniform(size)).reshape(shape)

    def gamma(self, shape_param: float, rate: float, n: int) -> np.ndarray:
        """Marsaglia-Tsang gamma sampler (see module docstring for draw order)."""
        if shape_param <= 0 or rate <= 0:
            raise InvalidConfigError(
                f"gamma parameters must be positive, got shape={shape_param}, rate={rate}"
            )
        boosted = shape_param < 1.0
        alpha = shape_param + 1.0 if boosted else shape_param
        d = alpha - 1.0 / 3.0
        c = 1.0 / np.sqrt(9.0 * d)
        out = np.empty(int(n))
        pending = np.arange(int(n))
        while pending.size:
            z = self.normal(pending.size)
            u = self.uniform(pending.size)
            v = (1.0 + c * z) ** 3
            ok = v > 0
            accept = ok & (np.log(u) < 0.5 * z**2 + d - d * np.where(ok, v, 1.0)
                           + d * np.log(np.where(ok, v, 1.0)))
            out[pending[accept]] = d * v[accept]
            pending = pending[~accept]
        if boosted:
            boost = self.uniform(int(n))
            out *= boost ** (1.0 / shape_param)
        return out / rate


@dataclass(frozen=True)
class DomainShift:
    """Affine embedding-space shift: row -> a @ row + mean_offset."""

    a: np.ndarray
    mean_offset: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.float64)
        off = np.asarray(self.mean_offset, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or off.shape != (a.shape[0],):
            raise InvalidInputError(
                f"shift shapes inconsistent: a {a.shape}, offset {off.shape}"
            )
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "mean_offset", off)

    def to_dict(self) -> dict:
        return {"a": self.a.tolist(), "mean_offset": self.mean_offset.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "DomainShift":
        return cls(a=np.asarray(d["a"]), mean_offset=np.asarray(d["mean_offset"]))


@dataclass(frozen=True)
class DomainSpec:
    """Seeded recipe for one synthetic domain (Gaussian or heavy-tailed)."""

    dim: int
    n_speakers: int
    utts_per_speaker: int
    seed: int
    phi_b: np.ndarray | None = None
    phi_w: np.ndarray | None = None
    F: np.ndarray | None = None
    W: np.ndarray | None = None
    nu: float | None = None
    mu: np.ndarray | None = None
    shift: DomainShift | None = None
    id_prefix: str = "spk"

    def to_dict(self) -> dict:
        def arr(v):
            return None if v is None else np.asarray(v).tolist()

        return {
            "dim": self.dim,
            "n_speakers": self.n_speakers,
            "utts_per_speaker": self.utts_per_speaker,
            "seed": self.seed,
            "phi_b": arr(self.phi_b),
            "phi_w": arr(self.phi_w),
            "F": arr(self.F),
            "W": arr(self.W),
            "nu": self.nu,
            "mu": arr(self.mu),
            "shift": None if self.shift is None else self.shift.to_dict(),
            "id_prefix": self.id_prefix,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DomainSpec":
        def arr(v):
            return None if v is None else np.asarray(v, dtype=np.float64)

        return cls(
            dim=int(d["dim"]),
            n_speakers=int(d["n_speakers"]),
            utts_per_speaker=int(d["utts_per_speaker"]),
            seed=int(d["seed"]),
            phi_b=arr(d.get("phi_b")),
            phi_w=arr(d.get("phi_w")),
            F=arr(d.get("F")),
            W=arr(d.get("W")),
            nu=d.get("nu"),
            mu=arr(d.get("mu")),
            shift=None if d.get("shift") is None else DomainShift.from_dict(d["shift"]),
            id_prefix=d.get("id_prefix", "spk"),
        )


def _spec_common(spec: DomainSpec):
    if spec.dim < 1 or spec.n_speakers < 1 or spec.utts_per_speaker < 1:
        raise InvalidConfigError(
            f"dim/n_speakers/utts_per_speaker must be positive, got "
            f"{spec.dim}/{spec.n_speakers}/{spec.utts_per_speaker}"
        )
    mu = np.zeros(spec.dim) if spec.mu is None else np.asarray(spec.mu, dtype=np.float64)
    if mu.shape != (spec.dim,):
        raise InvalidConfigError(f"mu has shape {mu.shape}, expected ({spec.dim},)")
    return mu


def _chol_psd(m, name: str) -> np.ndarray:
    """Cholesky-like factor L with L L' = m, tolerating PSD inputs."""
    a = np.asarray(m, dtype=np.float64)
    if a.shape[1] != a.shape[0]:
        raise InvalidConfigError(f"{name} must be square, got {a.shape}")
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(0.5 * (a + a.T))
        if vals[0] < -1e-8 * max(vals[-1], 0.0):
            raise InvalidConfigError(
                f"{name} is not PSD (min eigenvalue {vals[0]:.3e})"
            ) from None
        return vecs * np.sqrt(np.maximum(vals, 0.0))


def _make_ids(spec: DomainSpec):
    ids, speakers = [], []
    for s in range(spec.n_speakers):
        spk = f"{spec.id_prefix}{s:04d}"
        for u in range(spec.utts_per_speaker):
            ids.append(f"{spk}-utt{u:03d}")
            speakers.append(spk)
    return tuple(ids), tuple(speakers)


def gen_gplda(spec: DomainSpec) -> EmbeddingSet:
    """Sample a labeled set from a linear Gaussian speaker model.

    Per speaker an offset ~ N(0, phi_b); per utterance additive noise
    ~ N(0, phi_w); plus the spec mean and optional domain shift.
    """
    mu = _spec_common(spec)
    if spec.phi_b is None or spec.phi_w is None:
        raise InvalidConfigError("Gaussian generation requires phi_b and phi_w")
    lb = _chol_psd(spec.phi_b, "phi_b")
    lw = _chol_psd(spec.phi_w, "phi_w")
    s, u, d = spec.n_speakers, spec.utts_per_speaker, spec.dim
    stream = SeededStream(spec.seed)
    offsets = stream.normal((s, d)) @ lb.T
    noise = stream.normal((s, u, d)) @ lw.T
    x = (mu + offsets[:, None, :] + noise).reshape(s * u, d)
    ids, speakers = _make_ids(spec)
    out = EmbeddingSet(ids=ids, X=x, speakers=speakers)
    if spec.shift is not None:
        out = apply_domain_shift(out, spec.shift.a, spec.shift.mean_offset)
    return out


def gen_htplda(spec: DomainSpec) -> EmbeddingSet:
    """Sample a labeled set from the heavy-tailed model.

    Per speaker h ~ N(0, I); per utterance a precision scale
    lambda ~ Gamma(nu/2, nu/2) and then phi ~ N(F h, (lambda W)^{-1}).
    """
    mu = _spec_common(spec)
    if spec.F is None or spec.W is None or spec.nu is None:
        raise InvalidConfigError("heavy-tailed generation requires F, W, and nu")
    if not spec.nu > 0:
        raise InvalidConfigError(f"nu must be positive, got {spec.nu}")
    f = np.asarray(spec.F, dtype=np.float64)
    if f.ndim != 2 or f.shape[0] != spec.dim:
        raise InvalidConfigError(f"F must be ({spec.dim}, d_h), got {f.shape}")
    winv = np.linalg.inv(np.asarray(spec.W, dtype=np.float64))
    lnoise = _chol_psd(0.5 * (winv + winv.T), "W^{-1}")
    s, u, d = spec.n_speakers, spec.utts_per_speaker, spec.dim
    n = s * u
    stream = SeededStream(spec.seed)
    h = stream.normal((s, f.shape[1]))
    lam = stream.gamma(spec.nu / 2.0, spec.nu / 2.0, n)
    noise = stream.normal((n, d)) @ lnoise.T
    x = mu + np.repeat(h @ f.T, u, axis=0) + noise / np.sqrt(lam)[:, None]
    ids, speakers = _make_ids(spec)
    out = EmbeddingSet(ids=ids, X=x, speakers=speakers)
    if spec.shift is not None:
        out = apply_domain_shift(out, spec.shift.a, spec.shift.mean_offset)
    return out


def apply_domain_shift(x: EmbeddingSet, a, offset) -> EmbeddingSet:
    """Shift a set into another domain: row -> a @ row + offset (a invertible)."""
    mat = np.asarray(a, dtype=np.float64)
    off = np.asarray(offset, dtype=np.float64)
    if mat.shape != (x.dim, x.dim) or off.shape != (x.dim,):
        raise InvalidInputError(
            f"shift shapes a {mat.shape}, offset {off.shape} incompatible with dim {x.dim}"
        )
    if np.linalg.cond(mat) > 1e12:
        raise SingularMatrixError("domain-shift matrix is singular or near-singular")
    return x.with_x(x.X @ mat.T + off)


def make_trials(x: EmbeddingSet, n_target: int, n_nontarget: int, seed: int) -> TrialSet:
    """Sample distinct ordered (enroll, test) pairs with labels.

    Target pairs are enumerated (same speaker, enroll != test), shuffled by
    a pinned Fisher-Yates using the seeded uniform stream, and truncated to
    ``n_target``.  Nontarget pairs are rejection-sampled from the index grid
    (skipping same-speaker and already-drawn pairs).  Requested counts are
    returned exactly or an error is raised.
    """
    speakers = x.require_speakers()
    n = x.n
    groups: dict[str, list[int]] = {}
    for i, spk in enumerate(speakers):
        groups.setdefault(spk, []).append(i)
    target_pool = [
        (i, j)
        for idxs in groups.values()
        for i in idxs
        for j in idxs
        if i != j
    ]
    n_cross = n * (n - 1) - len(target_pool)
    if n_target > len(target_pool):
        raise InsufficientDataError(
            f"requested {n_target} target pairs but only {len(target_pool)} exist"
        )
    if n_nontarget > n_cross:
        raise InsufficientDataError(
            f"requested {n_nontarget} nontarget pairs but only {n_cross} exist"
        )
    stream = SeededStream(seed)

    # Fisher-Yates over the enumerated target pool.
    pool = list(target_pool)
    u = stream.uniform(max(len(pool) - 1, 0))
    for k in range(len(pool) - 1, 0, -1):
        j = int(u[len(pool) - 1 - k] * (k + 1))
        pool[k], pool[j] = pool[j], pool[k]
    targets = pool[:n_target]

    chosen: set[tuple[int, int]] = set()
    nontargets: list[tuple[int, int]] = []
    while len(nontargets) < n_nontarget:
        draws = stream.uniform(2 * (n_nontarget - len(nontargets)))
        for k in range(0, draws.size, 2):
            if len(nontargets) >= n_nontarget:
                break
            i = int(draws[k] * n)
            j = int(draws[k + 1] * n)
            if i == j or speakers[i] == speakers[j] or (i, j) in chosen:
                continue
            chosen.add((i, j))
            nontargets.append((i, j))

    pairs = tuple(
        (x.ids[i], x.ids[j]) for i, j in targets + nontargets
    )
    labels = (True,) * len(targets) + (False,) * len(nontargets)
    return TrialSet(pairs=pairs, labels=labels)


# ---------------------------------------------------------------------------
# Desk-scale benchmark: a shifted-domain pair small enough to run in seconds.
# ---------------------------------------------------------------------------

DEFAULT_BENCH_SEED = 20260810

BENCH_DIM = 32
BENCH_OOD_SPEAKERS, BENCH_OOD_UTTS = 200, 10
BENCH_IND_SPEAKERS, BENCH_IND_UTTS = 100, 6
BENCH_N_TARGET, BENCH_N_NONTARGET = 3000, 30000
BENCH_SCALE_RANGE = (0.5, 2.0)
BENCH_OFFSET_NORM = 2.0
BENCH_ROTATION_ANGLE = 0.3


def bench_base_covariances(dim: int = BENCH_DIM) -> tuple[np.ndarray, np.ndarray]:
    """Source-domain generative covariances: decaying between, identity within."""
    phi_b = np.diag(3.0 * 0.9 ** np.arange(dim))
    phi_w = np.eye(dim)
    return phi_b, phi_w


def bench_shift(seed: int, dim: int = BENCH_DIM) -> DomainShift:
    """Random bounded rotation times per-axis scales in [0.5, 2], offset of norm 2.

    The rotation is exp(angle * K) for a random skew-symmetric K of unit
    spectral norm, i.e. random axes but rotation angles bounded by the angle
    constant.  Second-order alignment cannot identify an arbitrary rotation,
    so an unbounded one would make every covariance-matching method useless
    by construction; a bounded rotation mirrors the drift these methods are
    built for while keeping the benchmark genuinely mismatched.
    """
    import scipy.linalg

    stream = SeededStream(seed)
    g = stream.normal((dim, dim))
    skew = 0.5 * (g - g.T)
    skew /= np.linalg.norm(skew, ord=2)
    rotation = scipy.linalg.expm(BENCH_ROTATION_ANGLE * skew)
    lo, hi = BENCH_SCALE_RANGE
    scales = lo + (hi - lo) * stream.uniform(dim)
    direction = stream.normal(dim)
    offset = direction / np.linalg.norm(direction) * BENCH_OFFSET_NORM
    return DomainShift(a=rotation * scales, mean_offset=offset)


@dataclass(frozen=True)
class BenchSmall:
    """The generated benchmark: source, shifted-domain, and evaluation sets plus trials."""

    seed: int
    ood: EmbeddingSet
    ind: EmbeddingSet
    eval: EmbeddingSet
    trials: TrialSet
    shift: DomainShift
    phi_b: np.ndarray = field(repr=False, default=None)
    phi_w: np.ndarray = field(repr=False, default=None)

    def provenance(self) -> dict:
        return {
            "seed": self.seed,
            "dim": BENCH_DIM,
            "ood": [BENCH_OOD_SPEAKERS, BENCH_OOD_UTTS],
            "ind": [BENCH_IND_SPEAKERS, BENCH_IND_UTTS],
            "trials": [BENCH_N_TARGET, BENCH_N_NONTARGET],
            "shift": self.shift.to_dict(),
        }


def make_bench_small(seed: int = DEFAULT_BENCH_SEED) -> BenchSmall:
    """Generate the desk-scale domain-shift benchmark.

    Three sets: a source-domain training set, a shifted-domain adaptation
    set (labeled, so it can also train an in-domain model), and a disjoint
    shifted-domain evaluation set of the same size from which the trials are
    drawn.  Evaluating on the adaptation set itself would hand the in-domain
    model an in-sample advantage no adaptation could beat.  Component seeds
    are ``seed + k`` with k = 1 (source data), 2 (adaptation data), 3 (shift
    parameters), 4 (trial sampling), 5 (evaluation data); the shifted sets
    reuse the source generative covariances before shifting, so their true
    covariances are the closed-form conjugates.
    """
    phi_b, phi_w = bench_base_covariances()
    shift = bench_shift(seed + 3)
    ood = gen_gplda(
        DomainSpec(
            dim=BENCH_DIM,
            n_speakers=BENCH_OOD_SPEAKERS,
            utts_per_speaker=BENCH_OOD_UTTS,
            seed=seed + 1,
            phi_b=phi_b,
            phi_w=phi_w,
            id_prefix="ood",
        )
    )
    ind = gen_gplda(
        DomainSpec(
            dim=BENCH_DIM,
            n_speakers=BENCH_IND_SPEAKERS,
            utts_per_speaker=BENCH_IND_UTTS,
            seed=seed + 2,
            phi_b=phi_b,
            phi_w=phi_w,
            shift=shift,
            id_prefix="ind",
        )
    )
    ind_eval = gen_gplda(
        DomainSpec(
            dim=BENCH_DIM,
            n_speakers=BENCH_IND_SPEAKERS,
            utts_per_speaker=BENCH_IND_UTTS,
            seed=seed + 5,
            phi_b=phi_b,
            phi_w=phi_w,
            shift=shift,
            id_prefix="eval",
        )
    )
    trials = make_trials(ind_eval, BENCH_N_TARGET, BENCH_N_NONTARGET, seed + 4)
    return BenchSmall(
        seed=seed,
        ood=ood,
        ind=ind,
        eval=ind_eval,
        trials=trials,
        shift=shift,
        phi_b=phi_b,
        phi_w=phi_w,
    )


# Heavy-tailed companion benchmark: same-domain train/eval pair with a low
# degrees-of-freedom generator, for back-end comparisons on non-Gaussian data.

BENCH_HT_DIM = 24
BENCH_HT_DH = 8
BENCH_HT_NU = 3.0
BENCH_HT_TRAIN = (150, 8)
BENCH_HT_EVAL = (80, 6)
BENCH_HT_N_TARGET, BENCH_HT_N_NONTARGET = 2000, 20000


def bench_heavy_loading(dim: int = BENCH_HT_DIM, d_h: int = BENCH_HT_DH) -> np.ndarray:
    """Axis-aligned loading matrix with decaying speaker-subspace variances."""
    f = np.zeros((dim, d_h))
    for k in range(d_h):
        f[k, k] = np.sqrt(6.0 * 0.8**k)
    return f


@dataclass(frozen=True)
class BenchHeavy:
    seed: int
    nu: float
    train: EmbeddingSet
    eval: EmbeddingSet
    trials: TrialSet
    F: np.ndarray = field(repr=False, default=None)


def make_bench_heavy(seed: int = DEFAULT_BENCH_SEED, nu: float = BENCH_HT_NU) -> BenchHeavy:
    """Generate the heavy-tailed benchmark (component seeds ``seed + k``, k = 1..3)."""
    f = bench_heavy_loading()
    w = np.eye(BENCH_HT_DIM)
    train = gen_htplda(
        DomainSpec(
            dim=BENCH_HT_DIM,
            n_speakers=BENCH_HT_TRAIN[0],
            utts_per_speaker=BENCH_HT_TRAIN[1],
            seed=seed + 1,
            F=f,
            W=w,
            nu=nu,
            id_prefix="httr",
        )
    )
    ev = gen_htplda(
        DomainSpec(
            dim=BENCH_HT_DIM,
            n_speakers=BENCH_HT_EVAL[0],
            utts_per_speaker=BENCH_HT_EVAL[1],
            seed=seed + 2,
            F=f,
            W=w,
            nu=nu,
            id_prefix="htev",
        )
    )
    trials = make_trials(ev, BENCH_HT_N_TARGET, BENCH_HT_N_NONTARGET, seed + 3)
    return BenchHeavy(seed=seed, nu=nu, train=train, eval=ev, trials=trials, F=f)


def save_spec(spec: DomainSpec, path) -> None:
    with open(path, "w") as fh:
        json.dump(spec.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_spec(path) -> DomainSpec:
    with open(path) as fh:
        return DomainSpec.from_dict(json.load(fh))
