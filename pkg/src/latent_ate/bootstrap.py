"""Nonparametric bootstrap confidence intervals for latent ATEs.

Subjects (columns) are resampled with replacement together with their
treatment labels, and the whole algorithm, including its factorization, is
rerun on each replicate. Replicate factors come out in arbitrary order, so
they are matched either to a supplied reference or to a running consensus
before effects are summarized.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from . import _rng
from ._parallel import map_ordered
from .alignment import FactorPermutation, consensus_align, hungarian_align
from .errors import DataValidationError, NumericalError
from .estimators import DATA_ALGORITHMS, estimate
from .factorization import FitConfig, as_array
from .imputation import as_treatment

__all__ = ["BootstrapResult", "bootstrap_ate", "empirical_quantile", "resample_indices"]


def empirical_quantile(x, q) -> np.ndarray:
    """Quantile by linear interpolation between order statistics.

    With sorted values x_(1) <= ... <= x_(n) the q-quantile is found at
    position h = (n - 1) q + 1, interpolating between x_(floor h) and
    x_(floor h + 1). Works along axis 0.
    """
    x = np.sort(np.asarray(x, dtype=float), axis=0)
    n = x.shape[0]
    if n == 0:
        raise DataValidationError("quantile of an empty sample")
    q = float(q)
    if not 0 <= q <= 1:
        raise DataValidationError(f"quantile level must lie in [0, 1], got {q}")
    h = (n - 1) * q
    lo = int(np.floor(h))
    hi = min(lo + 1, n - 1)
    return x[lo] + (h - lo) * (x[hi] - x[lo])


def resample_indices(n: int, seed: int, b: int) -> np.ndarray:
    """Column indices of bootstrap replicate ``b``."""
    return _rng.stream(seed, "bootstrap-replicate", b).integers(n, size=n)


@dataclass(frozen=True, eq=False)
class BootstrapResult:
    """Summary of B bootstrap replicates.

    ``replicate_psis`` is (B_ok, K) in aligned factor order; ``replicate_ids``
    gives each row's replicate index. ``consensus_lambda`` is the simplex
    consensus of aligned replicate factors, or the reference when one was
    supplied. ``similarities`` holds each replicate's total cosine similarity
    to its alignment target.
    """

    psi_mean: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    consensus_lambda: np.ndarray
    replicate_psis: np.ndarray
    replicate_ids: np.ndarray
    n_failed_replicates: int
    failures: tuple[str, ...]
    similarities: np.ndarray
    algorithm: str
    level: float = 0.95

    @property
    def n_replicates(self) -> int:
        return self.replicate_psis.shape[0]

    def covers(self, psi) -> np.ndarray:
        psi = np.asarray(psi, dtype=float)
        return (self.ci_lower <= psi) & (psi <= self.ci_upper)

    def aligned(self, p: FactorPermutation) -> "BootstrapResult":
        """Reorder factors: new factor j = old ``p.mapping[j]``."""
        idx = list(p.mapping)
        return replace(
            self,
            psi_mean=self.psi_mean[idx],
            ci_lower=self.ci_lower[idx],
            ci_upper=self.ci_upper[idx],
            consensus_lambda=self.consensus_lambda[:, idx],
            replicate_psis=self.replicate_psis[:, idx],
        )

    def aligned_to(self, reference) -> tuple["BootstrapResult", FactorPermutation]:
        p = hungarian_align(self.consensus_lambda, reference)
        return self.aligned(p), p


class _Replicate:
    def __init__(self, y, t, algorithm, k, cfg, kw):
        self.y, self.t, self.algorithm, self.k, self.cfg, self.kw = y, t, algorithm, k, cfg, kw

    def __call__(self, b: int):
        n = self.t.size
        idx = resample_indices(n, self.cfg.seed, b)
        tb = self.t[idx]
        if tb.min() == tb.max():
            arm = "treated" if tb[0] == 0 else "untreated"
            return b, None, None, f"replicate {b}: empty {arm} group"
        cfg = self.cfg.with_seed(_rng.derive_seed(self.cfg.seed, "bootstrap-replicate", b))
        try:
            est = estimate(self.algorithm, self.y[:, idx], tb, self.k, cfg, **self.kw)
        except (DataValidationError, NumericalError) as exc:
            return b, None, None, f"replicate {b}: {exc}"
        return b, est.psi, est.factor_model.lambda_, None


def bootstrap_ate(
    y,
    t,
    algorithm: str,
    k: int,
    B: int = 50,
    cfg: FitConfig = FitConfig(),
    *,
    reference=None,
    level: float = 0.95,
    threads: Optional[int] = 1,
    **kw,
) -> BootstrapResult:
    """Percentile bootstrap for a data algorithm's ATE.

    Replicate b draws its columns from the ``bootstrap-replicate`` stream at
    index b and seeds its factorization from the same key, so results do not
    depend on execution order or thread count. Replicates in which a
    treatment group is empty, or whose fit fails validation, are dropped and
    reported in ``failures``.

    Without ``reference``, replicates are aligned sequentially to a running
    consensus (replicate order); with it, each replicate is matched to
    ``reference`` directly.
    """
    if algorithm not in DATA_ALGORITHMS:
        raise DataValidationError(
            f"bootstrap needs a data algorithm ({', '.join(DATA_ALGORITHMS)}), got {algorithm!r}"
        )
    if int(B) < 1:
        raise DataValidationError("bootstrap needs at least one replicate")
    if not 0 < level < 1:
        raise DataValidationError(f"confidence level must lie in (0, 1), got {level}")
    y = as_array(y)
    tv = as_treatment(t)
    if y.shape[1] != tv.n:
        raise DataValidationError(f"{y.shape[1]} data columns but {tv.n} treatment entries")

    task = _Replicate(y, np.asarray(tv.t), algorithm, int(k), cfg, kw)
    out = map_ordered(task, range(int(B)), threads)
    ok = [(b, psi, lam) for b, psi, lam, msg in out if msg is None]
    failures = tuple(msg for *_, msg in out if msg is not None)
    if not ok:
        raise NumericalError(f"all {B} bootstrap replicates failed: {'; '.join(failures[:3])}")

    ids = np.array([b for b, _, _ in ok])
    psis = [psi for _, psi, _ in ok]
    lambdas = [lam for _, _, lam in ok]
    if reference is None:
        _, consensus, perms = consensus_align(lambdas)
    else:
        consensus = np.asarray(reference, dtype=float)
        perms = [hungarian_align(lam, consensus) for lam in lambdas]
    aligned = np.array([psi[list(p.mapping)] for psi, p in zip(psis, perms)])
    alpha = (1.0 - level) / 2.0
    return BootstrapResult(
        psi_mean=aligned.mean(axis=0),
        ci_lower=empirical_quantile(aligned, alpha),
        ci_upper=empirical_quantile(aligned, 1.0 - alpha),
        consensus_lambda=consensus,
        replicate_psis=aligned,
        replicate_ids=ids,
        n_failed_replicates=len(failures),
        failures=failures,
        similarities=np.array([p.total_similarity for p in perms]),
        algorithm=algorithm,
        level=float(level),
    )
