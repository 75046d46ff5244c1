"""Quantile-function representation of probability distributions.

Distributions are stored as quantile values on a shared midpoint grid over
(0, 1), which turns the L2-Wasserstein distance into a plain (scaled)
Euclidean distance between value vectors. Weighted Wasserstein barycenters
reduce to pointwise averages followed by a monotone (isotonic) projection.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy.special import ndtri

__all__ = [
    "ProbGrid",
    "QuantileGrid",
    "RawQuantileGrid",
    "gaussian_quantile",
    "empirical_quantile",
    "wasserstein_sq",
    "isotonic_project",
    "combine",
]

# Relative slack allowed when validating monotonicity of grids assembled by
# floating-point averaging; dips within this bound are repaired by a running
# maximum, anything larger is rejected.
_MONOTONE_RTOL = 1e-9


def _readonly(values: np.ndarray) -> np.ndarray:
    out = np.array(values, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class ProbGrid:
    """Midpoint evaluation grid t_m = (2m-1)/(2M) on (0,1), quadrature weight 1/M.

    Midpoints keep every node strictly inside (0, 1), so inverse CDFs stay
    finite, and make all inner products exact finite sums.
    """

    m_points: int
    t_values: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        m = self.m_points
        if not isinstance(m, (int, np.integer)) or m < 1:
            raise ValueError(f"m_points must be a positive integer, got {m!r}")
        t = (2.0 * np.arange(1, m + 1) - 1.0) / (2.0 * m)
        object.__setattr__(self, "t_values", _readonly(t))

    @property
    def quad_weight(self) -> float:
        return 1.0 / self.m_points

    def integrate(self, values: np.ndarray) -> float:
        """Midpoint-rule integral over (0,1) of values sampled on the grid."""
        values = np.asarray(values, dtype=float)
        if values.shape != (self.m_points,):
            raise ValueError(f"expected {self.m_points} values, got shape {values.shape}")
        return float(np.sum(values) / self.m_points)

    def __eq__(self, other: object) -> bool:
        # t-values are fully determined by the point count
        return isinstance(other, ProbGrid) and other.m_points == self.m_points

    def __hash__(self) -> int:
        return hash(("ProbGrid", self.m_points))


def _check_same_grid(a: "ProbGrid", b: "ProbGrid") -> None:
    if a is not b and a != b:
        raise ValueError(f"grids do not match: {a.m_points} vs {b.m_points} points")


@dataclass(frozen=True, eq=False)
class QuantileGrid:
    """A quantile function sampled on a ProbGrid; values are non-decreasing."""

    grid: ProbGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.grid.m_points,):
            raise ValueError(
                f"expected {self.grid.m_points} values, got shape {vals.shape}"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("quantile values must be finite")
        diffs = np.diff(vals)
        if diffs.size and diffs.min() < 0.0:
            tol = _MONOTONE_RTOL * max(1.0, float(np.abs(vals).max()))
            if -diffs.min() > tol:
                raise ValueError(
                    f"values must be non-decreasing (worst dip {-diffs.min():.3e})"
                )
            vals = np.maximum.accumulate(vals)
        object.__setattr__(self, "values", _readonly(vals))


@dataclass(frozen=True, eq=False)
class RawQuantileGrid:
    """Pointwise values on a ProbGrid with no monotonicity requirement.

    Intermediate product of weighted averaging; turn into a QuantileGrid via
    isotonic_project.
    """

    grid: ProbGrid
    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.grid.m_points,):
            raise ValueError(
                f"expected {self.grid.m_points} values, got shape {vals.shape}"
            )
        if not np.all(np.isfinite(vals)):
            raise ValueError("values must be finite")
        object.__setattr__(self, "values", _readonly(vals))


AnyGrid = Union[QuantileGrid, RawQuantileGrid]


def gaussian_quantile(mu: float, sigma: float, grid: ProbGrid) -> QuantileGrid:
    """Quantile grid of N(mu, sigma^2); sigma = 0 gives the point mass at mu."""
    mu = float(mu)
    sigma = float(sigma)
    if not np.isfinite(mu) or not np.isfinite(sigma):
        raise ValueError("mu and sigma must be finite")
    if sigma < 0.0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    return QuantileGrid(grid, mu + sigma * ndtri(grid.t_values))


def empirical_quantile(samples: Sequence[float], grid: ProbGrid) -> QuantileGrid:
    """Quantile grid of the empirical distribution of the samples.

    Order statistics are placed at plotting positions (i - 0.5)/n and
    linearly interpolated, clamping at the extreme order statistics.
    """
    vals = np.asarray(samples, dtype=float)
    if vals.ndim != 1 or vals.size == 0:
        raise ValueError("need at least one sample")
    if not np.all(np.isfinite(vals)):
        raise ValueError("samples must be finite")
    vals = np.sort(vals)
    positions = (np.arange(1, vals.size + 1) - 0.5) / vals.size
    return QuantileGrid(grid, np.interp(grid.t_values, positions, vals))


def wasserstein_sq(a: QuantileGrid, b: QuantileGrid) -> float:
    """Squared L2-Wasserstein distance between two quantile grids."""
    _check_same_grid(a.grid, b.grid)
    diff = a.values - b.values
    return float(np.sum(diff * diff) / a.grid.m_points)


def _pava(y: np.ndarray) -> np.ndarray:
    """Equal-weight pool-adjacent-violators: L2 projection onto non-decreasing
    vectors. Identity on already-monotone input."""
    means: list[float] = []
    counts: list[int] = []
    for v in y:
        means.append(float(v))
        counts.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            m2 = means.pop()
            c2 = counts.pop()
            m1 = means.pop()
            c1 = counts.pop()
            c = c1 + c2
            means.append((m1 * c1 + m2 * c2) / c)
            counts.append(c)
    return np.repeat(means, counts)


def isotonic_project(raw: AnyGrid) -> QuantileGrid:
    """Closest (in the grid L2 sense) non-decreasing grid to the input."""
    return QuantileGrid(raw.grid, _pava(np.asarray(raw.values, dtype=float)))


def combine(coeffs: Sequence[float], parts: Sequence[AnyGrid]) -> RawQuantileGrid:
    """Pointwise linear combination sum_s coeffs[s] * parts[s].

    With convex coefficients and monotone parts the result is monotone, but it
    is returned as a RawQuantileGrid; project (a no-op in that case) to get a
    QuantileGrid.
    """
    coeffs = np.asarray(coeffs, dtype=float)
    if coeffs.ndim != 1 or len(parts) != coeffs.size:
        raise ValueError(
            f"got {coeffs.size} coefficients for {len(parts)} grids"
        )
    if coeffs.size == 0:
        raise ValueError("need at least one grid to combine")
    grid = parts[0].grid
    for part in parts[1:]:
        _check_same_grid(grid, part.grid)
    stacked = np.stack([part.values for part in parts])
    return RawQuantileGrid(grid, coeffs @ stacked)
