"""Independent reference implementations used to check the library.

Everything here is deliberately brute-force or closed-form and shares no code
with the package internals it validates.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


def bisect_normal_quantile(t: float, tol: float = 1e-12) -> float:
    """Inverse standard normal CDF by bisection on the erf-based CDF."""
    lo, hi = -10.0, 10.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if 0.5 * (1.0 + math.erf(mid / math.sqrt(2.0))) < t:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def monotone_projection_exhaustive(y) -> np.ndarray:
    """L2 projection onto non-decreasing vectors by trying every partition of
    the indices into consecutive blocks of equal value (block value = mean)."""
    y = np.asarray(y, dtype=float)
    n = y.size
    best_vec, best_obj = None, np.inf
    for mask in range(1 << (n - 1)):
        bounds = [0] + [i + 1 for i in range(n - 1) if (mask >> i) & 1] + [n]
        vec = np.empty(n)
        prev = -np.inf
        feasible = True
        for a, b in zip(bounds, bounds[1:]):
            mean = y[a:b].mean()
            if mean < prev:
                feasible = False
                break
            vec[a:b] = mean
            prev = mean
        if feasible:
            obj = float(((vec - y) ** 2).sum())
            if obj < best_obj:
                best_obj, best_vec = obj, vec
    assert best_vec is not None
    return best_vec


def best_monotone_on_lattice(values, weights, levels) -> float:
    """Smallest weighted squared-distance objective sum_i w_i * mean_m
    (values[i, m] - g_m)^2 over all non-decreasing grids g drawn from the
    given value levels."""
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    m = values.shape[1]
    best = np.inf
    for combo in itertools.combinations_with_replacement(levels, m):
        g = np.asarray(combo)
        obj = float((weights * ((values - g) ** 2).mean(axis=1)).sum())
        best = min(best, obj)
    return best


def simplex_grid_minimum(a, b, c: float, resolution: float = 0.001) -> float:
    """Exact minimum of w'Aw - 2b'w + c over simplex points whose coordinates
    are multiples of `resolution`, for 2 to 4 candidates.

    Enumerates all but the last two coordinates; the remaining coordinate pair
    (k, rest - k) restricts the quadratic to a segment, where convexity pins
    the integer minimizer to the endpoints or the two integers bracketing the
    vertex.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    s = b.size
    steps = round(1.0 / resolution)

    def quad(w: np.ndarray) -> float:
        return float(w @ a @ w - 2.0 * (b @ w) + c)

    if s == 1:
        return quad(np.ones(1))
    if s == 2:
        i = np.arange(steps + 1)
        w = np.stack([i, steps - i], axis=1) / steps
        vals = np.einsum("ij,jk,ik->i", w, a, w) - 2.0 * (w @ b) + c
        return float(vals.min())

    # s in (3, 4): enumerate leading coordinates, solve the last pair exactly
    direction = np.zeros(s)
    direction[-2], direction[-1] = 1.0, -1.0
    alpha = float(direction @ a @ direction)
    best = np.inf
    leading = s - 2
    for counts in itertools.product(range(steps + 1), repeat=leading - 1):
        used = sum(counts)
        if used > steps:
            continue
        first = np.array(counts) / steps
        for i2 in range(steps - used + 1):
            head = np.concatenate([first, [i2 / steps]])
            rest = steps - used - i2
            base = np.zeros(s)
            base[:leading] = head
            base[-1] = rest / steps
            beta = 2.0 * float(direction @ (a @ base - b))
            candidates = {0, rest}
            if alpha > 0.0:
                vertex = -beta / (2.0 * alpha) * steps
                candidates.add(int(np.clip(math.floor(vertex), 0, rest)))
                candidates.add(int(np.clip(math.ceil(vertex), 0, rest)))
            for k in candidates:
                w = base.copy()
                w[-2] = k / steps
                w[-1] = (rest - k) / steps
                val = quad(w)
                if val < best:
                    best = val
    return best


def projected_gradient_reference(a, b, c: float, start, iters: int = 200_000):
    """Plain projected-gradient minimizer of w'Aw - 2b'w + c from a given
    start; used as an independent multi-start cross-check."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    w = np.asarray(start, dtype=float)
    lip = max(float(np.max(np.abs(a).sum(axis=1))), 1e-12)
    for _ in range(iters):
        grad = 2.0 * (a @ w - b)
        v = w - grad / (2.0 * lip)
        u = np.sort(v)[::-1]
        css = np.cumsum(u) - 1.0
        ks = np.arange(1, v.size + 1)
        k = ks[u - css / ks > 0][-1]
        w_new = np.maximum(v - css[k - 1] / k, 0.0)
        if np.max(np.abs(w_new - w)) < 1e-14:
            w = w_new
            break
        w = w_new
    return float(w @ a @ w - 2.0 * (b @ w) + c), w
