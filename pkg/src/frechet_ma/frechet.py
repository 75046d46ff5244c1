"""Global Frechet regression for quantile-grid responses.

A fit at a query point x is the monotone projection of the s(X, x)-weighted
average of the response quantile grids, where the weights come from the
sample mean and covariance of the predictors used by the candidate model.
Leave-group-out refits recompute those moments without the held-out rows,
which is what the cross-validation criterion consumes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import cho_solve

from .quantile import ProbGrid, QuantileGrid, _pava

__all__ = [
    "Dataset",
    "CandidateModel",
    "DesignStats",
    "FitError",
    "SingularCovarianceError",
    "make_folds",
    "design_stats",
    "s_weights",
    "fit_at",
    "leave_group_out_fits",
]

# Diagonal jitter ladder for barely-singular covariances, as multiples of the
# average diagonal entry. Exactly-zero variance stays singular on purpose.
_JITTER_FACTORS = (1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)

_MONOTONE_RTOL = 1e-9


class FitError(RuntimeError):
    """A regression fit could not be carried out (e.g. too few rows)."""


class SingularCovarianceError(FitError):
    """Predictor covariance stayed singular through the whole jitter ladder."""


@dataclass(frozen=True, eq=False)
class Dataset:
    """Training sample: an n x p predictor matrix and n quantile-grid responses.

    Responses are stored row-wise in a single n x M matrix sharing one grid.
    """

    predictors: np.ndarray
    response_values: np.ndarray
    grid: ProbGrid

    def __post_init__(self) -> None:
        x = np.asarray(self.predictors, dtype=float)
        y = np.asarray(self.response_values, dtype=float)
        if x.ndim != 2:
            raise ValueError(f"predictors must be 2-D, got shape {x.shape}")
        if y.ndim != 2 or y.shape[1] != self.grid.m_points:
            raise ValueError(
                f"responses must be n x {self.grid.m_points}, got shape {y.shape}"
            )
        if x.shape[0] != y.shape[0]:
            raise ValueError(
                f"{x.shape[0]} predictor rows vs {y.shape[0]} responses"
            )
        if not np.all(np.isfinite(x)):
            raise ValueError("predictors must be finite")
        if not np.all(np.isfinite(y)):
            raise ValueError("responses must be finite")
        diffs = np.diff(y, axis=1)
        if diffs.size and diffs.min() < 0.0:
            tol = _MONOTONE_RTOL * max(1.0, float(np.abs(y).max()))
            worst = -float(diffs.min())
            if worst > tol:
                bad = int(np.where((diffs < -tol).any(axis=1))[0][0])
                raise ValueError(
                    f"response row {bad} is not non-decreasing (worst dip {worst:.3e})"
                )
            y = np.maximum.accumulate(y, axis=1)
        x = x.copy()
        x.setflags(write=False)
        y = y.copy()
        y.setflags(write=False)
        object.__setattr__(self, "predictors", x)
        object.__setattr__(self, "response_values", y)

    @classmethod
    def from_grids(cls, predictors: np.ndarray, responses: Sequence[QuantileGrid]) -> "Dataset":
        if len(responses) == 0:
            raise ValueError("need at least one response")
        grid = responses[0].grid
        for r in responses[1:]:
            if r.grid != grid:
                raise ValueError("responses must share one grid")
        return cls(predictors, np.stack([r.values for r in responses]), grid)

    @property
    def n(self) -> int:
        return self.predictors.shape[0]

    @property
    def p(self) -> int:
        return self.predictors.shape[1]

    def response(self, i: int) -> QuantileGrid:
        return QuantileGrid(self.grid, self.response_values[i])

    def subset(self, rows: Sequence[int]) -> "Dataset":
        rows = np.asarray(rows, dtype=int)
        return Dataset(self.predictors[rows], self.response_values[rows], self.grid)


@dataclass(frozen=True, eq=False)
class CandidateModel:
    """A candidate regression: the subset of predictor columns it uses (0-based)."""

    indices: tuple[int, ...]

    def __post_init__(self) -> None:
        idx = tuple(int(i) for i in self.indices)
        if len(idx) == 0:
            raise ValueError("a candidate model needs at least one predictor")
        if any(i < 0 for i in idx):
            raise ValueError(f"negative predictor index in {idx}")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError(f"indices must be strictly increasing, got {idx}")
        object.__setattr__(self, "indices", idx)

    @property
    def n_predictors(self) -> int:
        return len(self.indices)

    def check_against(self, p: int) -> None:
        if self.indices[-1] >= p:
            raise ValueError(
                f"model uses column {self.indices[-1]} but data has only {p} columns"
            )


@dataclass(frozen=True, eq=False)
class DesignStats:
    """Sample mean and Cholesky factor of the (possibly jittered) covariance."""

    mean: np.ndarray
    cov_factor: np.ndarray  # lower triangular L with L L^T = cov + jitter * I
    jitter_applied: float


def make_folds(
    n: int, k: int, *, shuffle_seed: int | None = None
) -> list[np.ndarray]:
    """Partition rows 0..n-1 into k cross-validation folds.

    When k does not divide n, the first n mod k folds get the extra row.
    Assignment follows row order unless shuffle_seed is given.
    """
    if not 2 <= k <= n:
        raise ValueError(f"need 2 <= k <= n, got k={k}, n={n}")
    rows = np.arange(n)
    if shuffle_seed is not None:
        rows = np.random.default_rng(shuffle_seed).permutation(n)
    base, extra = divmod(n, k)
    folds = []
    start = 0
    for j in range(k):
        size = base + (1 if j < extra else 0)
        folds.append(rows[start : start + size].copy())
        start += size
    return folds


def _keep_rows(n: int, excluded: Iterable[int]) -> np.ndarray:
    excl = np.asarray(sorted(set(int(i) for i in excluded)), dtype=int)
    if excl.size and (excl[0] < 0 or excl[-1] >= n):
        raise ValueError(f"excluded indices out of range for n={n}")
    mask = np.ones(n, dtype=bool)
    mask[excl] = False
    return np.nonzero(mask)[0]


def design_stats(
    data: Dataset, model: CandidateModel, excluded: Iterable[int] = ()
) -> DesignStats:
    """Mean and covariance factor of the model's predictor columns, computed
    over the non-excluded rows with divisor n_used."""
    model.check_against(data.p)
    keep = _keep_rows(data.n, excluded)
    return _stats_from_rows(data.predictors[np.ix_(keep, model.indices)])


def _stats_from_rows(rows: np.ndarray) -> DesignStats:
    n_used, p_s = rows.shape
    if n_used < p_s + 1:
        raise FitError(
            f"need at least {p_s + 1} rows to fit {p_s} predictors, have {n_used}"
        )
    mean = rows.mean(axis=0)
    centered = rows - mean
    cov = centered.T @ centered / n_used
    tau = float(np.trace(cov)) / p_s
    for factor in (0.0,) + _JITTER_FACTORS:
        jitter = factor * tau
        try:
            chol = np.linalg.cholesky(cov + jitter * np.eye(p_s))
        except np.linalg.LinAlgError:
            continue
        return DesignStats(mean=mean, cov_factor=chol, jitter_applied=jitter)
    raise SingularCovarianceError(
        f"covariance of {p_s} predictors on {n_used} rows is singular "
        f"even after maximal jitter"
    )


def s_weights(stats: DesignStats, data_rows: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Regression weights 1 + (x - mean)' cov^{-1} (X_i - mean) for each row.

    Individual weights may be negative; over the rows that produced the stats
    they sum to the row count.
    """
    x = np.asarray(x, dtype=float)
    data_rows = np.asarray(data_rows, dtype=float)
    p_s = stats.mean.shape[0]
    if x.shape != (p_s,):
        raise ValueError(f"query has shape {x.shape}, expected ({p_s},)")
    if data_rows.ndim != 2 or data_rows.shape[1] != p_s:
        raise ValueError(
            f"rows have shape {data_rows.shape}, expected (n, {p_s})"
        )
    v = cho_solve((stats.cov_factor, True), x - stats.mean)
    return 1.0 + (data_rows - stats.mean) @ v


def _fit_values(
    stats: DesignStats,
    rows_sub: np.ndarray,
    values: np.ndarray,
    x: np.ndarray,
) -> np.ndarray:
    """Monotone projection of the s-weighted average of the response rows."""
    s = s_weights(stats, rows_sub, x)
    raw = (s @ values) / s.sum()
    return _pava(raw)


def fit_at(
    data: Dataset,
    model: CandidateModel,
    x: np.ndarray,
    excluded: Iterable[int] = (),
) -> QuantileGrid:
    """Fitted quantile grid at query x (given in the model's coordinates),
    using all rows outside `excluded`."""
    model.check_against(data.p)
    keep = _keep_rows(data.n, excluded)
    rows_sub = data.predictors[np.ix_(keep, model.indices)]
    stats = _stats_from_rows(rows_sub)
    vals = _fit_values(stats, rows_sub, data.response_values[keep], np.asarray(x, dtype=float))
    return QuantileGrid(data.grid, vals)


def leave_group_out_fits(
    data: Dataset, model: CandidateModel, folds: Sequence[np.ndarray]
) -> list[QuantileGrid]:
    """Held-out prediction for every row: row i is predicted from moments and
    responses that exclude i's entire fold.

    Folds must be pairwise disjoint subsets of the rows; rows not covered by
    any fold are fitted in-sample (empty exclusion set).
    """
    model.check_against(data.p)
    n = data.n
    seen = np.zeros(n, dtype=bool)
    for fold in folds:
        fold = np.asarray(fold, dtype=int)
        if fold.size and (fold.min() < 0 or fold.max() >= n):
            raise ValueError(f"fold indices out of range for n={n}")
        if seen[fold].any():
            raise ValueError("folds overlap")
        seen[fold] = True
    groups = [np.asarray(f, dtype=int) for f in folds if len(f)]
    uncovered = np.nonzero(~seen)[0]
    if uncovered.size:
        groups.append(uncovered)

    out: list[QuantileGrid | None] = [None] * n
    for group in groups:
        excluded = group if seen[group[0]] else ()
        keep = _keep_rows(n, excluded)
        rows_sub = data.predictors[np.ix_(keep, model.indices)]
        stats = _stats_from_rows(rows_sub)
        values = data.response_values[keep]
        for i in group:
            x = data.predictors[i, list(model.indices)]
            vals = _fit_values(stats, rows_sub, values, x)
            out[i] = QuantileGrid(data.grid, vals)
    return out  # type: ignore[return-value]
