"""Average treatment effects on NMF-learned latent outcomes.

Seven algorithms are provided. Two need the true latent potential outcomes
and only make sense in simulations:

=================  =====================================  ==========
algorithm          factor model fitted on                 estimator
=================  =====================================  ==========
oracle             (none; true L(0), L(1))                mITE
observed_outcome   (none; true L(T))                      DM
all_data           Y                                      DM
random_split       Y[:, S], NNLM on held-out columns      DM
impute             Y, NNLM on imputed Y(1-T)              mITE
stabilize          untreated Y, NNLM on treated Y         DM
impute_stabilize   imputed all-untreated Y0, NNLM on Y1   mITE
=================  =====================================  ==========

DM is the difference of group means of the observed-arm outcomes; mITE is
the mean over subjects of the paired contrast between arms. Every estimate
is reported in the factor order of its own fitted model; aligning to a
reference is a separate step (:meth:`AteEstimate.aligned`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import _rng
from .alignment import FactorPermutation, apply_permutation, hungarian_align
from .errors import DataValidationError
from .factorization import ArrayOrCounts, FactorModel, FitConfig, as_array, nmf_fit, nnlm_fit
from .imputation import as_treatment, assemble_potential_matrices, impute_counterfactuals

__all__ = [
    "ALGORITHMS",
    "DATA_ALGORITHMS",
    "ESTIMATOR_FORM",
    "LearnedOutcomes",
    "AteEstimate",
    "dm_estimator",
    "mite_estimator",
    "learn_outcomes",
    "estimate",
    "estimate_all_data",
    "estimate_random_split",
    "estimate_impute",
    "estimate_stabilize",
    "estimate_impute_stabilize",
    "estimate_oracle",
    "estimate_observed_outcome",
    "consensus_contributions",
    "draw_split",
]

ESTIMATOR_FORM = {
    "oracle": "mITE",
    "observed_outcome": "DM",
    "all_data": "DM",
    "random_split": "DM",
    "impute": "mITE",
    "stabilize": "DM",
    "impute_stabilize": "mITE",
}
ALGORITHMS = tuple(ESTIMATOR_FORM)
# Algorithms that only need observed data (usable outside simulations).
DATA_ALGORITHMS = ("all_data", "random_split", "impute", "stabilize", "impute_stabilize")


@dataclass(frozen=True, eq=False)
class LearnedOutcomes:
    """Learned latent outcomes, restricted to ``covered_subjects``.

    All matrices are K x len(covered_subjects). ``observed_arm[:, j]`` is the
    outcome at the subject's own treatment; the per-arm matrices are present
    only for algorithms that learn both arms.
    """

    observed_arm: np.ndarray
    covered_subjects: np.ndarray
    under_treatment: Optional[np.ndarray] = None
    under_control: Optional[np.ndarray] = None

    def permuted(self, mapping) -> "LearnedOutcomes":
        idx = list(mapping)
        pick = lambda a: None if a is None else a[idx, :]  # noqa: E731
        return replace(
            self,
            observed_arm=self.observed_arm[idx, :],
            under_treatment=pick(self.under_treatment),
            under_control=pick(self.under_control),
        )

    def at_arm(self, arm: int, t) -> np.ndarray:
        """K x N matrix holding each covered subject's outcome at ``arm`` (NaN if unknown).

        Columns are indexed by subject over the full cohort of ``t``.
        """
        t = as_treatment(t)
        k = self.observed_arm.shape[0]
        out = np.full((k, t.n), np.nan)
        cov = self.covered_subjects
        per_arm = self.under_treatment if arm == 1 else self.under_control
        if per_arm is not None:
            out[:, cov] = per_arm
        else:
            own = t.t[cov] == arm
            out[:, cov[own]] = self.observed_arm[:, own]
        return out


@dataclass(frozen=True, eq=False)
class AteEstimate:
    psi: np.ndarray
    algorithm: str
    estimator_form: str
    factor_model: Optional[FactorModel] = None
    outcomes: Optional[LearnedOutcomes] = None

    def __post_init__(self):
        if ESTIMATOR_FORM.get(self.algorithm) != self.estimator_form:
            raise DataValidationError(
                f"algorithm {self.algorithm!r} must use the {ESTIMATOR_FORM.get(self.algorithm)} estimator"
            )

    def aligned(self, p: FactorPermutation) -> "AteEstimate":
        """Same estimate with factors reordered: new factor j = old ``p.mapping[j]``."""
        idx = list(p.mapping)
        return replace(
            self,
            psi=self.psi[idx],
            factor_model=None if self.factor_model is None else apply_permutation(self.factor_model, p),
            outcomes=None if self.outcomes is None else self.outcomes.permuted(idx),
        )

    def aligned_to(self, reference) -> tuple["AteEstimate", FactorPermutation]:
        if self.factor_model is None:
            raise DataValidationError(f"{self.algorithm} has no fitted factors to align")
        p = hungarian_align(self.factor_model.lambda_, reference)
        return self.aligned(p), p


# -- estimators ------------------------------------------------------------------


def dm_estimator(outcomes: LearnedOutcomes, t) -> np.ndarray:
    """Treated mean minus untreated mean of observed-arm outcomes (covered subjects only)."""
    t = as_treatment(t)
    tc = t.t[outcomes.covered_subjects]
    if not (tc == 1).any():
        raise DataValidationError("empty treated group among covered subjects")
    if not (tc == 0).any():
        raise DataValidationError("empty untreated group among covered subjects")
    ell = outcomes.observed_arm
    return ell[:, tc == 1].mean(axis=1) - ell[:, tc == 0].mean(axis=1)


def mite_estimator(outcomes: LearnedOutcomes) -> np.ndarray:
    """Mean paired contrast between the treated-arm and untreated-arm outcomes."""
    if outcomes.under_treatment is None or outcomes.under_control is None:
        raise DataValidationError("mITE needs learned outcomes under both arms")
    return (outcomes.under_treatment - outcomes.under_control).mean(axis=1)


# -- learned outcomes per algorithm ---------------------------------------------


def draw_split(n: int, split_p: float, seed: int) -> np.ndarray:
    """Sorted factor-model subset S with |S| = ceil(n * split_p), from the ``split`` stream."""
    if not 0 < split_p < 1:
        raise DataValidationError(f"split proportion must lie in (0, 1), got {split_p}")
    size = math.ceil(n * split_p)
    rng = _rng.stream(seed, "split")
    return np.sort(rng.choice(n, size=size, replace=False))


def _check_rank(k: int, n_cols: int, what: str):
    if k > n_cols:
        raise DataValidationError(f"rank k={k} exceeds the {n_cols} columns available for {what}")


def _all_data(y, t, k, cfg):
    model = nmf_fit(y, k, cfg)
    return LearnedOutcomes(model.contributions, np.arange(t.n)), model


def _random_split(y, t, k, cfg, split_p=0.5, split=None):
    n = t.n
    s = draw_split(n, split_p, cfg.seed) if split is None else np.sort(np.asarray(split, dtype=int))
    held = np.setdiff1d(np.arange(n), s)
    if held.size == 0:
        raise DataValidationError("random split left no held-out subjects")
    _check_rank(k, s.size, "the factor-model subset")
    model = nmf_fit(y[:, s], k, cfg)
    ell = nnlm_fit(y[:, held], model.lambda_, cfg)
    return LearnedOutcomes(ell, held), model


def _stabilize(y, t, k, cfg):
    c, tr = t.untreated, t.treated
    _check_rank(k, c.size, f"the untreated subset (n0={c.size})")
    model = nmf_fit(y[:, c], k, cfg)
    ell = np.empty((k, t.n))
    ell[:, c] = model.contributions
    if tr.size:
        ell[:, tr] = nnlm_fit(y[:, tr], model.lambda_, cfg)
    return LearnedOutcomes(ell, np.arange(t.n)), model


def _impute(y, t, k, cfg):
    imp = impute_counterfactuals(y, t)
    model = nmf_fit(y, k, cfg)
    observed = model.contributions
    counterfactual = nnlm_fit(imp.y_counterfactual, model.lambda_, cfg)
    treated = (t.t == 1)[None, :]
    return (
        LearnedOutcomes(
            observed,
            np.arange(t.n),
            under_treatment=np.where(treated, observed, counterfactual),
            under_control=np.where(treated, counterfactual, observed),
        ),
        model,
    )


def _impute_stabilize(y, t, k, cfg):
    imp = impute_counterfactuals(y, t)
    y0, y1 = assemble_potential_matrices(y, imp, t)
    model = nmf_fit(y0, k, cfg)
    ell0 = model.contributions
    ell1 = nnlm_fit(y1, model.lambda_, cfg)
    observed = np.where((t.t == 1)[None, :], ell1, ell0)
    return LearnedOutcomes(observed, np.arange(t.n), under_treatment=ell1, under_control=ell0), model


_LEARNERS = {
    "all_data": _all_data,
    "random_split": _random_split,
    "impute": _impute,
    "stabilize": _stabilize,
    "impute_stabilize": _impute_stabilize,
}


def learn_outcomes(algorithm: str, y: ArrayOrCounts, t, k: int, cfg: FitConfig = FitConfig(), **kw):
    """Fit ``algorithm``'s latent outcome model. Returns (LearnedOutcomes, FactorModel).

    Unlike :func:`estimate`, this does not require both treatment groups
    unless the algorithm itself does (imputation does; NMF alone does not).
    """
    if algorithm not in _LEARNERS:
        raise DataValidationError(
            f"unknown data algorithm {algorithm!r}; choose one of {', '.join(DATA_ALGORITHMS)}"
        )
    y = as_array(y)
    t = as_treatment(t)
    if y.shape[1] != t.n:
        raise DataValidationError(f"{y.shape[1]} data columns but {t.n} treatment entries")
    return _LEARNERS[algorithm](y, t, int(k), cfg, **kw)


def estimate(algorithm: str, y: ArrayOrCounts, t, k: int, cfg: FitConfig = FitConfig(), **kw) -> AteEstimate:
    """Run one data algorithm end to end."""
    t = as_treatment(t)
    if algorithm != "random_split":
        t.require_both_groups(algorithm)
    outcomes, model = learn_outcomes(algorithm, y, t, k, cfg, **kw)
    form = ESTIMATOR_FORM[algorithm]
    psi = mite_estimator(outcomes) if form == "mITE" else dm_estimator(outcomes, t)
    return AteEstimate(psi, algorithm, form, model, outcomes)


def estimate_all_data(y, t, k, cfg: FitConfig = FitConfig()) -> AteEstimate:
    return estimate("all_data", y, t, k, cfg)


def estimate_random_split(y, t, k, split_p: float = 0.5, cfg: FitConfig = FitConfig(), split=None) -> AteEstimate:
    """NMF on a random subset S, NNLM and DM on the held-out subjects.

    A split that leaves a treatment group empty among held-out subjects is
    reported as an error, never silently redrawn.
    """
    return estimate("random_split", y, t, k, cfg, split_p=split_p, split=split)


def estimate_impute(y, t, k, cfg: FitConfig = FitConfig()) -> AteEstimate:
    return estimate("impute", y, t, k, cfg)


def estimate_stabilize(y, t, k, cfg: FitConfig = FitConfig()) -> AteEstimate:
    return estimate("stabilize", y, t, k, cfg)


def estimate_impute_stabilize(y, t, k, cfg: FitConfig = FitConfig()) -> AteEstimate:
    """Impute counterfactual data, factorize the all-untreated matrix, NNLM on the all-treated one."""
    return estimate("impute_stabilize", y, t, k, cfg)


def _latent(a, name) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[None, :]
    if a.ndim != 2 or not np.isfinite(a).all():
        raise DataValidationError(f"{name} must be a finite K x N matrix")
    return a


def estimate_oracle(l0, l1, t=None) -> AteEstimate:
    """Mean individual effect on the true latent potential outcomes."""
    l0 = _latent(l0, "l0")
    l1 = _latent(l1, "l1")
    if l0.shape != l1.shape:
        raise DataValidationError(f"l0 {l0.shape} and l1 {l1.shape} differ in shape")
    observed = l0 if t is None else np.where((as_treatment(t).t == 1)[None, :], l1, l0)
    outcomes = LearnedOutcomes(observed, np.arange(l0.shape[1]), under_treatment=l1, under_control=l0)
    return AteEstimate(mite_estimator(outcomes), "oracle", "mITE", None, outcomes)


def observed_outcome_model(l_observed, t) -> LearnedOutcomes:
    """Group-mean outcome model: every subject gets the mean true outcome of its own group."""
    ell = _latent(l_observed, "l_observed")
    t = as_treatment(t)
    if ell.shape[1] != t.n:
        raise DataValidationError(f"{ell.shape[1]} outcome columns but {t.n} treatment entries")
    means = np.empty_like(ell)
    for arm in (0, 1):
        idx = t.t == arm
        if idx.any():
            means[:, idx] = ell[:, idx].mean(axis=1, keepdims=True)
    return LearnedOutcomes(means, np.arange(t.n))


def estimate_observed_outcome(l_observed, t) -> AteEstimate:
    """Difference of group means of the true observed-arm latent outcomes."""
    t = as_treatment(t)
    outcomes = observed_outcome_model(l_observed, t)
    return AteEstimate(dm_estimator(outcomes, t), "observed_outcome", "DM", None, outcomes)


def consensus_contributions(y: ArrayOrCounts, consensus_lambda, cfg: FitConfig = FitConfig()) -> np.ndarray:
    """Contributions of every subject against a fixed (e.g. bootstrap consensus) factor matrix."""
    return nnlm_fit(y, consensus_lambda, cfg)
