"""Counterfactual imputation of count data on the square-root scale.

The unobserved potential outcome of each subject is imputed by shifting its
square-rooted data by the difference in group means of the square-rooted
data, then squaring back with a fixed variance correction
``0.25 * (1 + 1/n1 + 1/n0)`` (the Poisson square-root variance, 1/4,
propagated through the difference-in-means estimate).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataValidationError
from .factorization import ArrayOrCounts, CountMatrix, as_array

__all__ = [
    "TreatmentVector",
    "ImputationResult",
    "impute_counterfactuals",
    "assemble_potential_matrices",
    "variance_constant",
]


@dataclass(frozen=True, eq=False)
class TreatmentVector:
    t: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.t)
        if t.ndim != 1 or t.size < 1:
            raise DataValidationError("treatment vector must be 1-D and non-empty")
        if not np.isin(t, (0, 1)).all():
            raise DataValidationError("treatment entries must be 0 or 1")
        t = t.astype(np.int8)
        t.setflags(write=False)
        object.__setattr__(self, "t", t)

    @property
    def n(self) -> int:
        return self.t.size

    @property
    def n1(self) -> int:
        return int(self.t.sum())

    @property
    def n0(self) -> int:
        return self.n - self.n1

    @property
    def treated(self) -> np.ndarray:
        return np.flatnonzero(self.t == 1)

    @property
    def untreated(self) -> np.ndarray:
        return np.flatnonzero(self.t == 0)

    def require_both_groups(self, what: str = "this estimator"):
        if self.n1 == 0:
            raise DataValidationError(f"empty treated group: {what} needs at least one treated subject")
        if self.n0 == 0:
            raise DataValidationError(f"empty untreated group: {what} needs at least one untreated subject")

    def flipped(self, i: int) -> "TreatmentVector":
        t = self.t.copy()
        t[i] = 1 - t[i]
        return TreatmentVector(t)

    def __len__(self):
        return self.n


def as_treatment(t) -> TreatmentVector:
    return t if isinstance(t, TreatmentVector) else TreatmentVector(t)


@dataclass(frozen=True, eq=False)
class ImputationResult:
    y_counterfactual: np.ndarray
    psi_vst: np.ndarray
    variance_constant: float
    n_floored: int = 0


def variance_constant(n0: int, n1: int) -> float:
    return 0.25 * (1.0 + 1.0 / n1 + 1.0 / n0)


def impute_counterfactuals(y: ArrayOrCounts, t) -> ImputationResult:
    """Impute ``Y(1 - T)`` for every subject.

    Negative shifted square roots (possible for sparse data with large
    effects) are set to zero before squaring; ``n_floored`` counts them.
    """
    y = as_array(y)
    t = as_treatment(t)
    if y.shape[1] != t.n:
        raise DataValidationError(f"{y.shape[1]} data columns but {t.n} treatment entries")
    t.require_both_groups("imputation")

    y_vst = np.sqrt(y)
    treated = t.t == 1
    psi = y_vst[:, treated].mean(axis=1) - y_vst[:, ~treated].mean(axis=1)
    shift = np.where(treated, -1.0, 1.0)[None, :] * psi[:, None]
    negative = y_vst + shift < 0
    # (sqrt(y) + s)^2 expanded, so a zero shift returns y bit-for-bit.
    squared = np.where(negative, 0.0, y + shift * (2.0 * y_vst + shift))
    c = variance_constant(t.n0, t.n1)
    return ImputationResult(squared + c, psi, c, int(negative.sum()))


def assemble_potential_matrices(y: ArrayOrCounts, imp: ImputationResult, t):
    """All-untreated and all-treated matrices from observed plus imputed columns.

    Returns ``(y0, y1)``; CountMatrix in, CountMatrix out.
    """
    labels = (y.row_labels, y.col_labels) if isinstance(y, CountMatrix) else None
    y = as_array(y)
    t = as_treatment(t)
    yc = np.asarray(imp.y_counterfactual, dtype=float)
    if y.shape != yc.shape or y.shape[1] != t.n:
        raise DataValidationError(
            f"shape mismatch: observed {y.shape}, imputed {yc.shape}, {t.n} treatment entries"
        )
    treated = t.t == 1
    y0 = np.where(treated[None, :], yc, y)
    y1 = np.where(treated[None, :], y, yc)
    if labels is not None:
        return CountMatrix(y0, *labels), CountMatrix(y1, *labels)
    return y0, y1
