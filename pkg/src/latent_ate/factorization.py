"""Poisson NMF and fixed-factor nonnegative linear models (NNLM).

Both are fitted with KL-divergence multiplicative updates. The contributions
update is

    L[k, i] <- L[k, i] * sum_d(lam[d, k] * Y[d, i] / P[d, i]) / sum_d lam[d, k]

and the factor update is

    lam[d, k] <- lam[d, k] * sum_i(L[k, i] * Y[d, i] / P[d, i]) / sum_i L[k, i]

with ``P = lam @ L``. One sweep applies the contributions update and then the
factor update; NNLM applies only the former.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence, Union

import numpy as np

from . import _rng
from .errors import DataValidationError, NumericalError

__all__ = [
    "CountMatrix",
    "FactorModel",
    "FitConfig",
    "kl_divergence",
    "nmf_fit",
    "nnlm_fit",
    "normalize",
]


@dataclass(frozen=True, eq=False)
class CountMatrix:
    """D x N nonnegative data matrix; columns are subjects."""

    values: np.ndarray
    row_labels: tuple[str, ...] = ()
    col_labels: tuple[str, ...] = ()

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise DataValidationError(f"count matrix must be 2-D and non-empty, got shape {v.shape}")
        bad = ~np.isfinite(v)
        if bad.any():
            d, i = np.argwhere(bad)[0]
            raise DataValidationError(f"non-finite entry at row {d}, column {i}")
        if (v < 0).any():
            d, i = np.argwhere(v < 0)[0]
            raise DataValidationError(f"negative entry {v[d, i]} at row {d}, column {i}")
        v.setflags(write=False)
        rows = tuple(str(x) for x in self.row_labels) or tuple(f"v{d + 1}" for d in range(v.shape[0]))
        cols = tuple(str(x) for x in self.col_labels) or tuple(f"s{i + 1}" for i in range(v.shape[1]))
        for axis, labels, n in (("row", rows, v.shape[0]), ("column", cols, v.shape[1])):
            if len(labels) != n:
                raise DataValidationError(f"expected {n} {axis} labels, got {len(labels)}")
            if len(set(labels)) != n:
                dup = next(x for x in labels if labels.count(x) > 1)
                raise DataValidationError(f"duplicate {axis} label {dup!r}")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "row_labels", rows)
        object.__setattr__(self, "col_labels", cols)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def select_columns(self, idx) -> "CountMatrix":
        idx = np.asarray(idx, dtype=int)
        return CountMatrix(self.values[:, idx], self.row_labels, tuple(self.col_labels[i] for i in idx))


ArrayOrCounts = Union[np.ndarray, CountMatrix, Sequence]


def as_array(y: ArrayOrCounts) -> np.ndarray:
    """Validated float copy of ``y`` (a CountMatrix or anything array-like)."""
    if isinstance(y, CountMatrix):
        return np.array(y.values, dtype=float)
    return np.array(CountMatrix(y).values, dtype=float)


@dataclass(frozen=True, eq=False)
class FactorModel:
    lambda_: np.ndarray
    contributions: np.ndarray
    kl_at_convergence: float = float("nan")
    n_iterations_used: int = 0
    kl_trace: tuple[float, ...] = field(default=(), repr=False)

    @property
    def k(self) -> int:
        return self.lambda_.shape[1]

    def product(self) -> np.ndarray:
        return self.lambda_ @ self.contributions


@dataclass(frozen=True)
class FitConfig:
    """Settings shared by every NMF / NNLM fit.

    ``seed`` addresses the ``nmf-run`` random stream; restart ``r`` draws its
    initialization from ``(seed, "nmf-run", r)``.
    """

    n_runs: int = 5
    max_iterations: int = 2000
    rel_tolerance: float = 1e-6
    epsilon_floor: float = 1e-10
    seed: int = 0

    def __post_init__(self):
        if int(self.n_runs) < 1 or int(self.max_iterations) < 1:
            raise DataValidationError("n_runs and max_iterations must be positive integers")
        if not (self.rel_tolerance > 0 and self.epsilon_floor > 0):
            raise DataValidationError("rel_tolerance and epsilon_floor must be positive")
        if int(self.seed) < 0:
            raise DataValidationError("seed must be a non-negative integer")

    def with_seed(self, seed: int) -> "FitConfig":
        return replace(self, seed=int(seed))


def kl_divergence(y: ArrayOrCounts, yhat) -> float:
    """Generalized KL divergence sum(y log(y / yhat) - y + yhat), with 0 log 0 = 0."""
    y = y.values if isinstance(y, CountMatrix) else np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.shape != yhat.shape:
        raise DataValidationError(f"shape mismatch: {y.shape} vs {yhat.shape}")
    pos = y > 0
    if (yhat[pos] <= 0).any():
        d, i = np.argwhere(pos & (yhat <= 0))[0]
        raise DataValidationError(f"yhat must be positive where y > 0 (row {d}, column {i})")
    return _kl_terms(y[pos], yhat[pos]) + float(yhat[~pos].sum())


def _kl_terms(y: np.ndarray, q: np.ndarray) -> float:
    # Near a perfect fit use y (x - log1p(x)) with x = q/y - 1, which does not cancel.
    x = (q - y) / y
    near = np.abs(x) < 0.5
    terms = np.empty_like(x)
    terms[near] = x[near] - np.log1p(x[near])
    far = ~near
    terms[far] = np.log(y[far] / q[far]) + x[far]
    return float(y @ terms)


def normalize(m: FactorModel) -> FactorModel:
    """Rescale so factor columns sum to 1, moving the scale into contributions."""
    s = m.lambda_.sum(axis=0)
    if (s <= 0).any():
        raise NumericalError(f"factor column {int(np.argmin(s))} has zero sum; cannot normalize")
    return replace(m, lambda_=m.lambda_ / s, contributions=m.contributions * s[:, None])


# -- fitting engine -----------------------------------------------------------


# Below this KL per unit count, rounding in the iterates dominates any real change.
_EXACT_FIT = 1e-14


class _Objective:
    """KL(Y || P + eps)."""

    def __init__(self, y: np.ndarray, eps: float):
        flat = y.ravel()
        self.nz = np.flatnonzero(flat)
        self.z = np.flatnonzero(flat == 0)
        self.ynz = flat[self.nz]
        self.eps = eps

    def __call__(self, p: np.ndarray) -> float:
        q = p.ravel() + self.eps
        return _kl_terms(self.ynz, q[self.nz]) + float(q[self.z].sum())


def _multiplicative_updates(y, lam, L, cfg: FitConfig, update_lambda: bool, record: bool):
    """Iterate until the relative KL change falls below tolerance. Mutates lam, L.

    A fit whose KL has dropped to the floating-point resolution of the
    objective (relative to the total count) is exact and also stops.
    """
    eps = cfg.epsilon_floor
    objective = _Objective(y, eps)
    exact = _EXACT_FIT * float(y.sum())
    p = lam @ L
    prev = objective(p)
    trace = [prev] if record else None
    n_iter = 0
    lam_sums = lam.sum(axis=0)[:, None] + eps
    for n_iter in range(1, int(cfg.max_iterations) + 1):
        L *= lam.T @ (y / (p + eps))
        L /= lam_sums
        p = lam @ L
        if update_lambda:
            lam *= (y / (p + eps)) @ L.T
            lam /= L.sum(axis=1) + eps
            lam_sums = lam.sum(axis=0)[:, None] + eps
            p = lam @ L
        cur = objective(p)
        if record:
            trace.append(cur)
        if cur <= exact or prev <= 0 or abs(prev - cur) / prev < cfg.rel_tolerance:
            prev = cur
            break
        prev = cur
    if not (np.isfinite(L).all() and np.isfinite(lam).all()):
        raise NumericalError("multiplicative updates produced non-finite values")
    return prev, n_iter, tuple(trace) if record else ()


def _initialize(rng: np.random.Generator, d: int, k: int, colsums: np.ndarray):
    """Uniform(0.1, 1.1) entries; product column sums matched to the data."""
    lam = rng.uniform(0.1, 1.1, size=(d, k))
    lam /= lam.sum(axis=0)
    L = rng.uniform(0.1, 1.1, size=(k, colsums.size))
    L *= colsums / L.sum(axis=0)
    return lam, L


def _check_support(y: np.ndarray):
    zr = np.flatnonzero(y.sum(axis=1) <= 0)
    if zr.size:
        raise DataValidationError(f"row {zr[0]} is all zeros; remove it before fitting")
    zc = np.flatnonzero(y.sum(axis=0) <= 0)
    if zc.size:
        raise DataValidationError(f"column {zc[0]} is all zeros; remove it before fitting")


def nmf_fit(
    y: ArrayOrCounts,
    k: int,
    cfg: FitConfig = FitConfig(),
    *,
    fixed_lambda=None,
    record_trace: bool = False,
) -> FactorModel:
    """Fit ``y ~ lam @ L`` by KL multiplicative updates with random restarts.

    Runs ``cfg.n_runs`` restarts and keeps the lowest final KL (earliest run
    on ties). The result is normalized so the factor columns sum to one.

    Parameters
    ----------
    y : array-like or CountMatrix, shape (D, N)
    k : int
        Rank, ``1 <= k <= min(D, N)``.
    cfg : FitConfig
    fixed_lambda : array, shape (D, k), optional
        Freeze the factor matrix at this value and update only contributions.
        Initial draws are consumed exactly as for a free fit.
    record_trace : bool
        Keep the per-sweep objective of the selected run in ``kl_trace``.
    """
    y = as_array(y)
    d, n = y.shape
    k = int(k)
    if not 1 <= k <= min(d, n):
        raise DataValidationError(f"rank k={k} out of range for a {d}x{n} matrix (need 1 <= k <= {min(d, n)})")
    _check_support(y)
    if fixed_lambda is not None:
        fixed_lambda = _check_lambda(fixed_lambda, d, k)
    colsums = y.sum(axis=0)

    best = None
    for run in range(int(cfg.n_runs)):
        lam, L = _initialize(_rng.stream(cfg.seed, "nmf-run", run), d, k, colsums)
        if fixed_lambda is not None:
            lam = fixed_lambda.copy()
        kl, n_iter, trace = _multiplicative_updates(
            y, lam, L, cfg, update_lambda=fixed_lambda is None, record=record_trace
        )
        if best is None or kl < best[0] - 1e-12:
            best = (kl, n_iter, trace, lam, L)
    kl, n_iter, trace, lam, L = best
    return normalize(FactorModel(lam, L, kl, n_iter, trace))


def _check_lambda(lam, d: int, k: int | None = None) -> np.ndarray:
    lam = np.array(lam, dtype=float)
    if lam.ndim != 2 or lam.shape[0] != d or (k is not None and lam.shape[1] != k):
        raise DataValidationError(f"factor matrix shape {lam.shape} incompatible with {d} data rows")
    if not np.isfinite(lam).all() or (lam < 0).any():
        raise DataValidationError("factor matrix must be finite and nonnegative")
    zero = np.flatnonzero(lam.sum(axis=0) <= 0)
    if zero.size:
        raise DataValidationError(f"factor column {zero[0]} is all zeros")
    return lam


def nnlm_fit(y: ArrayOrCounts, lambda_fixed, cfg: FitConfig = FitConfig(), *, record_trace: bool = False):
    """Contributions (K x N) for ``y`` with the factor matrix held fixed.

    KL is convex in the contributions once the factors are fixed, so a single
    start is used: the run-0 initialization of :func:`nmf_fit`. With
    ``cfg.n_runs == 1`` this equals ``nmf_fit(..., fixed_lambda=lambda_fixed)``.
    Columns with zero total get zero contributions.
    """
    y = as_array(y)
    d, n = y.shape
    lam = _check_lambda(lambda_fixed, d)
    if not np.allclose(lam.sum(axis=0), 1.0, atol=1e-8):
        raise DataValidationError("fixed factor columns must each sum to 1")
    k = lam.shape[1]
    colsums = y.sum(axis=0)
    _, L = _initialize(_rng.stream(cfg.seed, "nmf-run", 0), d, k, colsums)
    out = np.zeros((k, n))
    live = colsums > 0
    if live.any():
        Ls = np.ascontiguousarray(L[:, live])
        kl, n_iter, trace = _multiplicative_updates(
            np.ascontiguousarray(y[:, live]), lam.copy(), Ls, cfg, update_lambda=False, record=record_trace
        )
        out[:, live] = Ls
    if record_trace:
        return out, trace
    return out
