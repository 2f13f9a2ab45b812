"""Synthetic cohorts and learning-induced interference metrics.

A cohort draws each subject's baseline latent vector from an empirical pool,
adds independent Gaussian noise (centred at the true effect for the treated
arm), truncates at zero, assigns treatment by Bernoulli(pi), and draws
Poisson counts at rate ``lambda_true @ L``.

Interference is measured through the individual average learned latent
outcome (IALLO): a subject's learned outcome at a fixed own treatment,
averaged over re-randomizations of everybody else's treatment. Latent
potential outcomes and both potential count vectors are held fixed across
re-randomizations, so runs differ only through the treatment program.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _rng
from ._parallel import map_ordered
from .alignment import hungarian_align
from .errors import DataValidationError, NumericalError
from .estimators import ALGORITHMS, learn_outcomes, observed_outcome_model
from .factorization import CountMatrix, FitConfig
from .imputation import TreatmentVector

__all__ = [
    "SimConfig",
    "SimDataset",
    "IalloResult",
    "IndirectEffectReport",
    "synthetic_signatures",
    "synthetic_pool",
    "default_sim_config",
    "generate_dataset",
    "draw_counts",
    "estimate_iallo",
    "li_iaie",
    "li_paie",
    "scaled_total_abs_liPAIE",
    "interference_report",
    "MUTATION_TYPES",
]

_BASES = "ACGT"
_SUBSTITUTIONS = ("C>A", "C>G", "C>T", "T>A", "T>C", "T>G")
MUTATION_TYPES = tuple(
    f"{five}[{sub}]{three}" for sub in _SUBSTITUTIONS for five in _BASES for three in _BASES
)


# -- configuration ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SimConfig:
    lambda_true: np.ndarray
    sample_pool: np.ndarray
    psi_true: np.ndarray
    sigma0: np.ndarray
    sigma1: np.ndarray
    pi: float = 0.2
    n: int = 100
    seed: int = 0

    def __post_init__(self):
        lam = np.array(self.lambda_true, dtype=float)
        pool = np.atleast_2d(np.array(self.sample_pool, dtype=float))
        if lam.ndim != 2 or (lam < 0).any() or not np.allclose(lam.sum(axis=0), 1.0, atol=1e-8):
            raise DataValidationError("lambda_true must be a nonnegative matrix with columns summing to 1")
        k = lam.shape[1]
        if pool.size == 0:
            raise DataValidationError("sample pool is empty")
        if pool.shape[1] != k:
            raise DataValidationError(f"pool vectors have {pool.shape[1]} entries, lambda_true has {k} factors")
        vecs = {}
        for name in ("psi_true", "sigma0", "sigma1"):
            v = np.broadcast_to(np.array(getattr(self, name), dtype=float), (k,)).copy()
            if not np.isfinite(v).all():
                raise DataValidationError(f"{name} must be finite")
            vecs[name] = v
        if (vecs["sigma0"] < 0).any() or (vecs["sigma1"] < 0).any():
            raise DataValidationError("noise standard deviations must be nonnegative")
        if not 0 < self.pi < 1:
            raise DataValidationError(f"treatment probability must lie in (0, 1), got {self.pi}")
        if int(self.n) < 1:
            raise DataValidationError("cohort size must be positive")
        object.__setattr__(self, "lambda_true", lam)
        object.__setattr__(self, "sample_pool", pool)
        for name, v in vecs.items():
            object.__setattr__(self, name, v)

    @property
    def k(self) -> int:
        return self.lambda_true.shape[1]

    @property
    def d(self) -> int:
        return self.lambda_true.shape[0]


@dataclass(frozen=True, eq=False)
class SimDataset:
    """One simulated cohort.

    ``y0`` and ``y1`` are the potential count matrices; ``y`` holds each
    subject's column at its realized treatment.
    """

    l0: np.ndarray
    l1: np.ndarray
    t: TreatmentVector
    y: CountMatrix
    y0: np.ndarray
    y1: np.ndarray

    def observed_latent(self, t=None) -> np.ndarray:
        t = self.t if t is None else t
        return np.where((np.asarray(t.t if isinstance(t, TreatmentVector) else t) == 1)[None, :], self.l1, self.l0)

    def counts_at(self, t) -> np.ndarray:
        tt = np.asarray(t.t if isinstance(t, TreatmentVector) else t)
        return np.where((tt == 1)[None, :], self.y1, self.y0)


# -- synthetic inputs ---------------------------------------------------------------


def _channel(sub: str, five: str | None = None, three: str | None = None) -> np.ndarray:
    mask = np.zeros(96, dtype=bool)
    for j, name in enumerate(MUTATION_TYPES):
        if name[2:5] == sub and (five is None or name[0] in five) and (three is None or name[-1] in three):
            mask[j] = True
    return mask


def synthetic_signatures(seed: int = 20240501, background: float = 0.02) -> np.ndarray:
    """Five 96-channel signatures shaped after common single-base-substitution processes.

    Columns, in order: APOBEC C>T at TCW, homologous-recombination-like flat
    profile, C>T at CpG, APOBEC C>G at TCW, C>A oxidative-damage-like. The
    flat one is last so it can carry the treatment effect. Every channel gets
    at least ``background`` / 96 of each signature's mass.
    """
    rng = np.random.default_rng(seed)
    jitter = lambda: rng.gamma(8.0, 1.0 / 8.0, size=96)  # noqa: E731
    sigs = np.zeros((96, 5))

    apobec_t = 0.02 * jitter()
    apobec_t[_channel("C>T", "T", "AT")] += 6.0
    apobec_t[_channel("C>T", "T", "CG")] += 1.5
    apobec_t[_channel("C>G", "T", "AT")] += 0.8
    sigs[:, 0] = apobec_t

    sigs[:, 4] = rng.gamma(3.0, 1.0 / 3.0, size=96)
    sigs[_channel("C>G"), 4] *= 1.4
    sigs[_channel("T>C"), 4] *= 1.2

    cpg = 0.05 * jitter()
    cpg[_channel("C>T", None, "G")] += 4.0
    cpg[_channel("C>T")] += 0.2
    sigs[:, 2] = cpg

    apobec_g = 0.02 * jitter()
    apobec_g[_channel("C>G", "T", "AT")] += 6.0
    apobec_g[_channel("C>G", "T", "CG")] += 1.2
    apobec_g[_channel("C>T", "T", "AT")] += 1.0
    sigs[:, 3] = apobec_g

    ox = 0.02 * jitter()
    ox[_channel("C>A")] += 1.5 * jitter()[:16]
    ox[_channel("C>A", "ACG", "T")] += 1.0
    ox[_channel("T>A")] += 0.1
    sigs[:, 1] = ox

    sigs /= sigs.sum(axis=0)
    sigs = (1.0 - background) * sigs + background / 96.0
    # Column order: APOBEC-T, oxidative, CpG, APOBEC-G, flat.
    return sigs / sigs.sum(axis=0)


def synthetic_pool(
    n_vectors: int = 111,
    medians=(300.0, 500.0, 450.0, 250.0, 1200.0),
    log_sd=(1.5, 0.9, 0.9, 1.5, 0.9),
    correlation=None,
    seed: int = 0,
) -> np.ndarray:
    """Pool of latent contribution vectors with log-normal marginals.

    The default makes factors 0 and 3 heavy-tailed and strongly correlated
    with each other (one mutational process observed through two
    signatures); the rest are moderately dispersed.
    """
    medians = np.asarray(medians, dtype=float)
    log_sd = np.asarray(log_sd, dtype=float)
    k = medians.size
    if correlation is None:
        correlation = np.eye(k)
        if k >= 4:
            correlation[0, 3] = correlation[3, 0] = 0.8
    correlation = np.asarray(correlation, dtype=float)
    rng = _rng.stream(seed, "pool")
    z = rng.multivariate_normal(np.zeros(k), correlation, size=int(n_vectors), method="cholesky")
    return medians * np.exp(log_sd * z)


def default_sim_config(n: int = 100, pi: float = 0.2, seed: int = 0, effect: float = 2000.0) -> SimConfig:
    """Desk-scale analog of a five-signature mutational cohort (effect on the last factor)."""
    lam = synthetic_signatures()
    k = lam.shape[1]
    psi = np.zeros(k)
    psi[-1] = effect
    sigma0 = np.full(k, math.sqrt(10.0))
    sigma1 = sigma0.copy()
    sigma1[-1] = math.sqrt(20.0)
    return SimConfig(lam, synthetic_pool(seed=seed), psi, sigma0, sigma1, pi=pi, n=n, seed=seed)


# -- dataset generation ---------------------------------------------------------------


def draw_counts(lambda_true, latent, rng: np.random.Generator) -> np.ndarray:
    """Poisson counts with rate ``lambda_true @ latent``."""
    return rng.poisson(np.asarray(lambda_true) @ np.asarray(latent)).astype(float)


def generate_dataset(cfg: SimConfig, index: int = 0) -> SimDataset:
    """Draw cohort number ``index`` from the ``sim-dataset`` stream of ``cfg.seed``."""
    rng = _rng.stream(cfg.seed, "sim-dataset", index)
    n, k = int(cfg.n), cfg.k
    base = cfg.sample_pool[rng.integers(cfg.sample_pool.shape[0], size=n)].T
    eps0 = rng.normal(size=(k, n)) * cfg.sigma0[:, None]
    eps1 = rng.normal(size=(k, n)) * cfg.sigma1[:, None]
    l0 = np.maximum(base + eps0, 0.0)
    l1 = np.maximum(base + cfg.psi_true[:, None] + eps1, 0.0)
    t = TreatmentVector((rng.random(n) < cfg.pi).astype(np.int8))
    y0 = draw_counts(cfg.lambda_true, l0, rng)
    y1 = draw_counts(cfg.lambda_true, l1, rng)
    y = np.where((t.t == 1)[None, :], y1, y0)
    rows = MUTATION_TYPES if cfg.d == 96 else ()
    return SimDataset(l0, l1, t, CountMatrix(y, rows), y0, y1)


# -- IALLO ------------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class IalloResult:
    """IALLO estimates for one (dataset, algorithm, pi).

    ``iallo[t]`` is K x N, NaN where no realization produced a value.
    ``counts[t, i]`` is the number of realizations averaged for subject i.
    """

    iallo: np.ndarray
    counts: np.ndarray
    algorithm: str
    pi: float
    n_realizations: int
    failures: tuple[str, ...] = field(default=())

    @property
    def untreated(self) -> np.ndarray:
        return self.iallo[0]


@dataclass(frozen=True)
class _RunSpec:
    algorithm: str
    t: tuple
    split: Optional[tuple]


class _Runner:
    """Learned observed-arm outcomes for one treatment program; picklable for worker pools."""

    def __init__(self, dataset: SimDataset, k: int, fit_cfg: FitConfig, reference: np.ndarray):
        self.dataset = dataset
        self.k = k
        self.fit_cfg = fit_cfg
        self.reference = reference

    def __call__(self, spec: _RunSpec):
        ds = self.dataset
        t = TreatmentVector(np.array(spec.t, dtype=np.int8))
        if spec.algorithm == "oracle":
            return ds.observed_latent(t), None
        if spec.algorithm == "observed_outcome":
            return observed_outcome_model(ds.observed_latent(t), t).observed_arm, None
        kw = {} if spec.split is None else {"split": np.array(spec.split, dtype=int)}
        try:
            outcomes, model = learn_outcomes(
                spec.algorithm, ds.counts_at(t), t, self.k, self.fit_cfg, **kw
            )
        except (DataValidationError, NumericalError) as exc:
            return None, f"{spec.algorithm} failed for treatment program with n1={t.n1}: {exc}"
        p = hungarian_align(model.lambda_, self.reference)
        outcomes = outcomes.permuted(p.mapping)
        out = np.full((self.k, t.n), np.nan)
        out[:, outcomes.covered_subjects] = outcomes.observed_arm
        return out, None


def estimate_iallo(
    cfg: SimConfig,
    dataset: SimDataset,
    algorithm: str,
    pi: float,
    R: int,
    k: int,
    fit_cfg: FitConfig = FitConfig(),
    *,
    arms=(0, 1),
    split_p: float = 0.5,
    dataset_index: int = 0,
    threads: int | None = 1,
) -> IalloResult:
    """Monte Carlo IALLO for every subject under assignment probability ``pi``.

    For each realization r a treatment program is drawn from the
    ``realization`` stream; the algorithm is run on it once, and once more per
    subject with that subject's treatment flipped. A subject's value at arm t
    comes from whichever of the two runs gives it treatment t. Every run uses
    ``fit_cfg`` unchanged, seed included, so the learner is one fixed
    deterministic map and IALLOs under different ``pi`` differ only through
    the treatment programs (common random numbers). Realization r thresholds
    the same uniforms at every ``pi``, so a subject treated under ``pi`` is
    also treated under any larger probability. Learned factors are
    aligned to ``cfg.lambda_true`` before outcomes are read off.

    For ``random_split`` a subject that falls in the factor-model subset is
    swapped with a random held-out subject, so its outcome is always learned
    out of sample.

    ``arms`` restricts which IALLOs are computed; indirect effects need only
    arm 0, which skips the flips of untreated subjects.
    """
    if algorithm not in ALGORITHMS:
        raise DataValidationError(f"unknown algorithm {algorithm!r}")
    if int(R) < 1:
        raise DataValidationError("R must be at least 1")
    if not 0 < pi < 1:
        raise DataValidationError(f"pi must lie in (0, 1), got {pi}")
    arms = tuple(sorted(set(int(a) for a in arms)))
    n = dataset.l0.shape[1]
    kk = dataset.l0.shape[0]

    # Plan every run: key -> spec, and for each (r, i, arm) which key supplies it.
    specs: dict[tuple, _RunSpec] = {}
    wanted: list[tuple[int, int, tuple]] = []  # (arm, subject, key)
    for r in range(int(R)):
        # Uniforms do not depend on pi, so programs under two probabilities are coupled.
        rng = _rng.stream(cfg.seed, "realization", dataset_index, r)
        t_r = (rng.random(n) < pi).astype(np.int8)
        split = None
        swap = None
        if algorithm == "random_split":
            split = np.sort(rng.choice(n, size=math.ceil(n * split_p), replace=False))
            held = np.setdiff1d(np.arange(n), split)
            if held.size == 0:
                raise DataValidationError("split proportion leaves no held-out subjects")
            swap = held[rng.integers(held.size, size=n)]
        for i in range(n):
            for arm in arms:
                t_i = t_r if t_r[i] == arm else _flip(t_r, i)
                s_i = None
                if split is not None:
                    s_i = split if i not in split else np.sort(np.where(split == i, swap[i], split))
                key = (t_i.tobytes(), None if s_i is None else s_i.tobytes())
                if key not in specs:
                    specs[key] = _RunSpec(
                        algorithm, tuple(int(x) for x in t_i), None if s_i is None else tuple(int(x) for x in s_i)
                    )
                wanted.append((arm, i, key))

    keys = list(specs)
    runner = _Runner(dataset, int(k), fit_cfg, cfg.lambda_true)
    results = dict(zip(keys, map_ordered(runner, [specs[key] for key in keys], threads)))

    total = np.zeros((2, kk, n))
    counts = np.zeros((2, n), dtype=int)
    for arm, i, key in wanted:
        values, _ = results[key]
        if values is None or np.isnan(values[:, i]).any():
            continue
        total[arm, :, i] += values[:, i]
        counts[arm, i] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        iallo = total / counts[:, None, :]
    for arm in (0, 1):
        if arm not in arms:
            iallo[arm] = np.nan
    failures = tuple(msg for _, msg in (results[key] for key in keys) if msg)
    return IalloResult(iallo, counts, algorithm, float(pi), int(R), failures)


def _flip(t: np.ndarray, i: int) -> np.ndarray:
    out = t.copy()
    out[i] = 1 - out[i]
    return out


# -- indirect effects --------------------------------------------------------------------


def li_iaie(iallo_pi, iallo_pi_prime) -> np.ndarray:
    """Per-subject difference of untreated IALLOs (K x N)."""
    a = _table(iallo_pi)
    b = _table(iallo_pi_prime)
    if a.shape != b.shape:
        raise DataValidationError(f"IALLO tables differ in shape: {a.shape} vs {b.shape}")
    return a - b


def li_paie(iallo_pi, iallo_pi_prime) -> np.ndarray:
    """Population average of the per-subject untreated-IALLO differences (K-vector).

    Subjects missing a value under either mechanism are left out.
    """
    diff = li_iaie(iallo_pi, iallo_pi_prime)
    keep = ~np.isnan(diff).any(axis=0)
    if not keep.any():
        raise DataValidationError("no subject has untreated IALLOs under both mechanisms")
    return diff[:, keep].mean(axis=1)


def scaled_total_abs_liPAIE(li_iaie_table, y_totals) -> np.ndarray:
    """Sum over factors of |liIAIE|, divided by twice the subject's mutation count.

    Moving m mutations from one factor to another changes two entries by m
    each, hence the factor two.
    """
    diff = _table(li_iaie_table)
    totals = np.asarray(y_totals, dtype=float).ravel()
    if totals.size != diff.shape[1]:
        raise DataValidationError(f"{totals.size} totals for {diff.shape[1]} subjects")
    if (totals <= 0).any():
        raise DataValidationError("mutation totals must be positive")
    return np.abs(diff).sum(axis=0) / (2.0 * totals)


def _table(x) -> np.ndarray:
    if isinstance(x, IalloResult):
        x = x.untreated
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    return x


@dataclass(frozen=True, eq=False)
class IndirectEffectReport:
    iallo_by_pi: dict
    li_iaie: np.ndarray
    li_paie: np.ndarray
    scaled_total_abs: np.ndarray
    algorithm: str
    pi: float
    pi_prime: float


def interference_report(
    cfg: SimConfig,
    dataset: SimDataset,
    algorithm: str,
    R: int,
    k: int,
    fit_cfg: FitConfig = FitConfig(),
    *,
    pi: float = 0.2,
    pi_prime: float = 0.8,
    arms=(0,),
    dataset_index: int = 0,
    threads: int | None = 1,
) -> IndirectEffectReport:
    """liIAIE, liPAIE and scaled total absolute liIAIE between two assignment probabilities.

    Mutation totals are each subject's untreated potential count total.
    """
    res = {
        p: estimate_iallo(
            cfg, dataset, algorithm, p, R, k, fit_cfg, arms=arms, dataset_index=dataset_index, threads=threads
        )
        for p in (pi, pi_prime)
    }
    diff = li_iaie(res[pi], res[pi_prime])
    return IndirectEffectReport(
        iallo_by_pi=res,
        li_iaie=diff,
        li_paie=li_paie(res[pi], res[pi_prime]),
        scaled_total_abs=scaled_total_abs_liPAIE(diff, dataset.y0.sum(axis=0)),
        algorithm=algorithm,
        pi=float(pi),
        pi_prime=float(pi_prime),
    )
