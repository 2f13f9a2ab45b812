"""Repeated-dataset simulation studies: bias, coverage and interference.

These drive the desk-scale checks in the acceptance suite and can be run on
their own::

    from latent_ate.study import bias_coverage_study, interference_study
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bootstrap import bootstrap_ate
from .estimators import estimate
from .factorization import FitConfig
from .simulation import SimConfig, generate_dataset, interference_report

__all__ = ["BiasCoverageResult", "InterferenceStudyResult", "bias_coverage_study", "interference_study"]


@dataclass(frozen=True, eq=False)
class BiasCoverageResult:
    """Per-dataset estimates, all aligned to the true factors.

    Arrays are (datasets, K). ``point`` is the single-fit estimate,
    ``boot_mean`` the bootstrap mean, ``covered`` whether the percentile CI
    contains the true effect.
    """

    algorithm: str
    psi_true: np.ndarray
    point: np.ndarray
    boot_mean: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    oracle: np.ndarray
    n_failed_replicates: np.ndarray

    @property
    def covered(self) -> np.ndarray:
        return (self.ci_lower <= self.psi_true) & (self.psi_true <= self.ci_upper)

    @property
    def coverage(self) -> np.ndarray:
        return self.covered.mean(axis=0)


def bias_coverage_study(
    cfg: SimConfig,
    n_datasets: int,
    B: int,
    algorithm: str = "impute_stabilize",
    fit_cfg: FitConfig = FitConfig(),
    threads: int | None = 1,
    progress=None,
) -> BiasCoverageResult:
    """Estimate and bootstrap ``algorithm`` on datasets 0..n_datasets-1.

    Replicates are aligned to ``cfg.lambda_true``, as is the point estimate.
    Dataset i fits with seed ``fit_cfg.seed + i``.
    """
    k = cfg.k
    rows = {key: [] for key in ("point", "boot", "lo", "hi", "oracle", "failed")}
    for i in range(int(n_datasets)):
        ds = generate_dataset(cfg, i)
        fc = fit_cfg.with_seed(fit_cfg.seed + i)
        est, _ = estimate(algorithm, ds.y, ds.t, k, fc).aligned_to(cfg.lambda_true)
        boot = bootstrap_ate(ds.y, ds.t, algorithm, k, B, fc, reference=cfg.lambda_true, threads=threads)
        rows["point"].append(est.psi)
        rows["boot"].append(boot.psi_mean)
        rows["lo"].append(boot.ci_lower)
        rows["hi"].append(boot.ci_upper)
        rows["oracle"].append((ds.l1 - ds.l0).mean(axis=1))
        rows["failed"].append(boot.n_failed_replicates)
        if progress:
            progress(i, est.psi, boot)
    return BiasCoverageResult(
        algorithm=algorithm,
        psi_true=cfg.psi_true.copy(),
        point=np.array(rows["point"]),
        boot_mean=np.array(rows["boot"]),
        ci_lower=np.array(rows["lo"]),
        ci_upper=np.array(rows["hi"]),
        oracle=np.array(rows["oracle"]),
        n_failed_replicates=np.array(rows["failed"]),
    )


@dataclass(frozen=True, eq=False)
class InterferenceStudyResult:
    """``li_paie[a]`` is (datasets, K); ``scaled_abs[a]`` is (datasets,) of per-dataset means over subjects."""

    algorithms: tuple[str, ...]
    li_paie: dict
    scaled_abs: dict
    n_failures: dict

    def mean_scaled_abs(self, algorithm: str) -> float:
        return float(np.mean(self.scaled_abs[algorithm]))


def interference_study(
    cfg: SimConfig,
    n_datasets: int,
    R: int,
    algorithms=("oracle", "all_data", "impute_stabilize"),
    pi: float = 0.2,
    pi_prime: float = 0.8,
    fit_cfg: FitConfig = FitConfig(),
    threads: int | None = 1,
    progress=None,
) -> InterferenceStudyResult:
    """liPAIE and mean scaled total absolute liIAIE per dataset and algorithm."""
    algorithms = tuple(algorithms)
    paie = {a: [] for a in algorithms}
    scaled = {a: [] for a in algorithms}
    failures = {a: 0 for a in algorithms}
    for i in range(int(n_datasets)):
        ds = generate_dataset(cfg, i)
        for a in algorithms:
            rep = interference_report(
                cfg, ds, a, R, cfg.k, fit_cfg.with_seed(fit_cfg.seed + i),
                pi=pi, pi_prime=pi_prime, dataset_index=i, threads=threads,
            )
            paie[a].append(rep.li_paie)
            scaled[a].append(float(np.nanmean(rep.scaled_total_abs)))
            failures[a] += sum(len(r.failures) for r in rep.iallo_by_pi.values())
            if progress:
                progress(i, a, rep)
    return InterferenceStudyResult(
        algorithms=algorithms,
        li_paie={a: np.array(v) for a, v in paie.items()},
        scaled_abs={a: np.array(v) for a, v in scaled.items()},
        n_failures=failures,
    )
