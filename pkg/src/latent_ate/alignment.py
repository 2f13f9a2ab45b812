"""Factor matching by cosine similarity and bootstrap consensus building."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DataValidationError
from .factorization import FactorModel

__all__ = [
    "FactorPermutation",
    "cosine_similarity_matrix",
    "hungarian_align",
    "apply_permutation",
    "consensus_align",
]

# Totals closer than this are treated as equally optimal for tie-breaking.
_TIE_TOL = 1e-12


@dataclass(frozen=True)
class FactorPermutation:
    """``mapping[j]`` is the estimated column assigned to reference column ``j``."""

    mapping: tuple[int, ...]
    total_similarity: float

    def __post_init__(self):
        m = tuple(int(x) for x in self.mapping)
        if sorted(m) != list(range(len(m))):
            raise DataValidationError(f"{m} is not a permutation of 0..{len(m) - 1}")
        object.__setattr__(self, "mapping", m)

    @property
    def inverse(self) -> "FactorPermutation":
        inv = np.empty(len(self.mapping), dtype=int)
        inv[list(self.mapping)] = np.arange(len(self.mapping))
        return FactorPermutation(tuple(inv), self.total_similarity)

    @classmethod
    def identity(cls, k: int) -> "FactorPermutation":
        return cls(tuple(range(k)), float("nan"))


def _columns(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise DataValidationError(f"{name} must be a 2-D matrix")
    norms = np.linalg.norm(a, axis=0)
    if (norms == 0).any():
        raise DataValidationError(f"{name} column {int(np.argmin(norms))} is all zeros")
    return a / norms


def cosine_similarity_matrix(a, b) -> np.ndarray:
    """Column-wise cosine similarities, shape (a.shape[1], b.shape[1])."""
    a = _columns(a, "a")
    b = _columns(b, "b")
    if a.shape[0] != b.shape[0]:
        raise DataValidationError(f"row count mismatch: {a.shape[0]} vs {b.shape[0]}")
    return a.T @ b


def _total(sim: np.ndarray, mapping) -> float:
    return float(sum(sim[j, m] for j, m in enumerate(mapping)))


def hungarian_align(estimated, reference) -> FactorPermutation:
    """Assignment of estimated columns to reference columns maximizing total cosine.

    Among equally optimal assignments the lexicographically smallest mapping is
    returned, so the result does not depend on solver internals.
    """
    estimated = np.asarray(estimated, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if estimated.shape[1:] != reference.shape[1:] or estimated.ndim != 2:
        raise DataValidationError(
            f"factor count mismatch: estimated {estimated.shape} vs reference {reference.shape}"
        )
    sim = cosine_similarity_matrix(reference, estimated)
    return _best_assignment(sim)


def _best_assignment(sim: np.ndarray) -> FactorPermutation:
    k = sim.shape[0]
    rows, cols = linear_sum_assignment(-sim)
    best = _total(sim, cols[np.argsort(rows)])

    # Fix reference columns in order, each to the smallest estimated column
    # that still admits an optimal completion.
    mapping: list[int] = []
    free = list(range(k))
    for j in range(k):
        for c in free:
            rest_rows = list(range(j + 1, k))
            rest_cols = [x for x in free if x != c]
            value = sum(sim[jj, mm] for jj, mm in enumerate(mapping)) + sim[j, c]
            if rest_rows:
                sub = sim[np.ix_(rest_rows, rest_cols)]
                r, cc = linear_sum_assignment(-sub)
                value += sub[r, cc].sum()
            if value >= best - _TIE_TOL:
                mapping.append(c)
                free.remove(c)
                break
        else:  # pragma: no cover - unreachable: the optimum itself qualifies
            raise AssertionError("tie-break search lost the optimum")
    return FactorPermutation(tuple(mapping), _total(sim, mapping))


def apply_permutation(m: FactorModel, p: FactorPermutation) -> FactorModel:
    """Reorder factor columns and contribution rows: new factor j = old ``mapping[j]``."""
    idx = list(p.mapping)
    if len(idx) != m.k:
        raise DataValidationError(f"permutation of length {len(idx)} does not fit a rank-{m.k} model")
    return replace(m, lambda_=m.lambda_[:, idx], contributions=m.contributions[idx, :])


def consensus_align(lambdas) -> tuple[list[np.ndarray], np.ndarray, list[FactorPermutation]]:
    """Sequentially align replicate factor matrices to their running mean.

    Replicate 0 is kept as is; replicate b is matched against the raw
    element-wise mean of the already aligned replicates 0..b-1. The consensus
    is the mean of all aligned replicates with columns rescaled to sum to one.

    Returns the aligned matrices, the consensus, and each replicate's
    permutation (replicate 0 gets the identity).
    """
    lambdas = [np.asarray(x, dtype=float) for x in lambdas]
    if not lambdas:
        raise DataValidationError("consensus alignment needs at least one matrix")
    shape = lambdas[0].shape
    for b, lam in enumerate(lambdas):
        if lam.shape != shape or lam.ndim != 2:
            raise DataValidationError(f"replicate {b} has shape {lam.shape}, expected {shape}")

    k = shape[1]
    aligned = [lambdas[0].copy()]
    perms = [FactorPermutation(tuple(range(k)), _total(cosine_similarity_matrix(lambdas[0], lambdas[0]), range(k)))]
    running = lambdas[0].copy()
    for b in range(1, len(lambdas)):
        p = hungarian_align(lambdas[b], running / b)
        aligned.append(lambdas[b][:, list(p.mapping)])
        perms.append(p)
        running += aligned[-1]
    consensus = running / len(lambdas)
    consensus = consensus / consensus.sum(axis=0)
    return aligned, consensus, perms
