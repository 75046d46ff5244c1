"""Cross-validated model averaging over candidate Frechet regressions.

The K-fold criterion is a convex quadratic in the weight vector, so it is
assembled once as (A, b, c) coefficients from the held-out predictions and
minimized exactly over the probability simplex by projected gradient descent
with an active-set polish. AIC/BIC-style selection and smoothed weighting are
provided as baselines.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .frechet import CandidateModel, Dataset, FitError, fit_at, leave_group_out_fits
from .quantile import QuantileGrid, combine, isotonic_project

__all__ = [
    "CandidateSet",
    "CvQuadratic",
    "WeightVector",
    "CandidateCriteria",
    "build_cv_quadratic",
    "simplex_project",
    "solve_simplex_qp",
    "averaged_predict",
    "information_criteria",
    "ic_weights",
    "ic_select",
]

logger = logging.getLogger(__name__)

# floor applied to the residual scale before taking logs
SIGMA2_FLOOR = 1e-12

_KKT_TOL = 1e-7
_SUPPORT_TOL = 1e-9


def _default_label(model: CandidateModel) -> str:
    return "+".join(f"x{i + 1}" for i in model.indices)


@dataclass(frozen=True, eq=False)
class CandidateSet:
    """Ordered collection of distinct candidate models with display labels."""

    models: tuple[CandidateModel, ...]
    labels: tuple[str, ...]

    def __post_init__(self) -> None:
        models = tuple(self.models)
        if len(models) == 0:
            raise ValueError("need at least one candidate model")
        index_sets = [m.indices for m in models]
        if len(set(index_sets)) != len(index_sets):
            raise ValueError("candidate models must be pairwise distinct")
        labels = tuple(self.labels)
        if len(labels) != len(models):
            raise ValueError(f"{len(labels)} labels for {len(models)} models")
        object.__setattr__(self, "models", models)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_indices(
        cls,
        index_lists: Sequence[Sequence[int]],
        labels: Sequence[str] | None = None,
        *,
        one_based: bool = False,
    ) -> "CandidateSet":
        shift = 1 if one_based else 0
        models = tuple(
            CandidateModel(tuple(sorted(int(i) - shift for i in idx)))
            for idx in index_lists
        )
        if labels is None:
            labels = tuple(_default_label(m) for m in models)
        return cls(models, tuple(labels))

    @property
    def size(self) -> int:
        return len(self.models)

    def __len__(self) -> int:
        return len(self.models)


def _renormalize_exact(w: np.ndarray) -> np.ndarray:
    """Clip to the non-negative orthant and rescale so the sum is exactly 1."""
    w = np.maximum(np.asarray(w, dtype=float), 0.0)
    total = w.sum()
    if total <= 0.0:
        raise ValueError("weights sum to zero")
    w = w / total
    for _ in range(10):
        gap = 1.0 - w.sum()
        if gap == 0.0:
            break
        w[np.argmax(w)] += gap
    return w


@dataclass(frozen=True, eq=False)
class WeightVector:
    """A point on the candidate simplex plus solver diagnostics.

    Construction clips negatives within 1e-12 and renormalizes so the entries
    sum to exactly one.
    """

    weights: np.ndarray
    objective: float
    iterations: int
    kkt_residual: float
    converged: bool = True

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise ValueError(f"weights must be a non-empty vector, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        if w.min() < -1e-12:
            raise ValueError(f"negative weight {w.min():.3e} exceeds tolerance")
        w = _renormalize_exact(w)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)


@dataclass(frozen=True, eq=False)
class CvQuadratic:
    """The K-fold criterion written as CV(w) = w'Aw - 2 b'w + c."""

    a_matrix: np.ndarray
    b_vector: np.ndarray
    c_scalar: float

    def __post_init__(self) -> None:
        a = np.asarray(self.a_matrix, dtype=float)
        b = np.asarray(self.b_vector, dtype=float)
        s = b.size
        if a.shape != (s, s):
            raise ValueError(f"A has shape {a.shape}, expected ({s}, {s})")
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b)) and np.isfinite(self.c_scalar)):
            raise ValueError("quadratic coefficients must be finite")
        a = a.copy()
        a.setflags(write=False)
        b = b.copy()
        b.setflags(write=False)
        object.__setattr__(self, "a_matrix", a)
        object.__setattr__(self, "b_vector", b)

    @property
    def size(self) -> int:
        return self.b_vector.size

    def evaluate(self, w: np.ndarray) -> float:
        w = np.asarray(w, dtype=float)
        return float(w @ self.a_matrix @ w - 2.0 * (self.b_vector @ w) + self.c_scalar)


def build_cv_quadratic(
    data: Dataset, candidates: CandidateSet, folds: Sequence[np.ndarray]
) -> CvQuadratic:
    """Assemble the CV criterion from leave-group-out predictions.

    A[s, s'] accumulates grid inner products of held-out predictions, b pairs
    them with the observed responses, and c is the responses' own energy, so
    that w'Aw - 2b'w + c equals the summed squared Wasserstein CV error of
    the w-averaged prediction.
    """
    n = data.n
    m = data.grid.m_points
    preds = np.empty((len(candidates), n, m))
    for s, (model, label) in enumerate(zip(candidates.models, candidates.labels)):
        try:
            fits = leave_group_out_fits(data, model, folds)
        except FitError as exc:
            raise FitError(f"candidate '{label}': {exc}") from exc
        preds[s] = [fit.values for fit in fits]
    y = data.response_values
    a = np.einsum("aim,bim->ab", preds, preds) / m
    b = np.einsum("aim,im->a", preds, y) / m
    c = float(np.sum(y * y) / m)
    return CvQuadratic(a, b, c)


def simplex_project(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort-based)."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    shifted = np.cumsum(u) - 1.0
    ks = np.arange(1, v.size + 1)
    k = ks[u - shifted / ks > 0][-1]
    tau = shifted[k - 1] / k
    return np.maximum(v - tau, 0.0)


def _kkt_residual(a: np.ndarray, b: np.ndarray, w: np.ndarray) -> float:
    grad = 2.0 * (a @ w - b)
    mu = float(w @ grad)
    dual = float(np.max(mu - grad))
    active = w > _SUPPORT_TOL
    comp = float(np.max(np.abs(grad[active] - mu))) if active.any() else 0.0
    return max(dual, comp, 0.0)


def _solve_on_support(
    a: np.ndarray, b: np.ndarray, support: np.ndarray
) -> np.ndarray | None:
    """Minimizer of w'aw - 2b'w with sum(w) = 1 and w = 0 off the support."""
    k = support.size
    kkt = np.zeros((k + 1, k + 1))
    kkt[:k, :k] = 2.0 * a[np.ix_(support, support)]
    kkt[:k, k] = 1.0
    kkt[k, :k] = 1.0
    rhs = np.concatenate([2.0 * b[support], [1.0]])
    try:
        sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(sol)):
        return None
    return sol[:k]


def _polish_active_set(
    a: np.ndarray, b: np.ndarray, w_start: np.ndarray
) -> np.ndarray | None:
    """Refine a near-optimal simplex point to an exact KKT point.

    Classic primal active-set loop seeded with the support of w_start: solve
    the equality-constrained problem on the support, drop coordinates that
    come out negative, add zero coordinates whose multiplier says they should
    enter, and stop when primal and dual feasibility both hold.
    """
    s = b.size
    support = np.nonzero(w_start > _SUPPORT_TOL)[0]
    if support.size == 0:
        return None
    for _ in range(3 * s + 5):
        sol = _solve_on_support(a, b, support)
        if sol is None:
            return None
        if sol.min() < -1e-12 and support.size > 1:
            support = np.delete(support, int(np.argmin(sol)))
            continue
        w = np.zeros(s)
        w[support] = np.maximum(sol, 0.0)
        grad = 2.0 * (a @ w - b)
        mu = float(w @ grad)
        off = np.setdiff1d(np.arange(s), support)
        if off.size == 0:
            return w
        violation = mu - grad[off]
        if float(violation.max()) <= 1e-11:
            return w
        support = np.sort(np.append(support, off[int(np.argmax(violation))]))
    return None


def solve_simplex_qp(q: CvQuadratic, *, max_iter: int = 100_000) -> WeightVector:
    """Minimize CV(w) over the simplex by projected gradient from uniform start.

    The problem is normalized by a row-sum bound on ||A||_2 so the iterate
    path (and hence the returned weights) is invariant to rescaling all
    coefficients. Iterations stop after ten consecutive objective decreases
    below 1e-12 on the normalized problem, then an active-set refinement of
    the final iterate is accepted whenever it does not worsen the objective.
    If the result still misses the KKT tolerance, it is returned with
    converged=False.
    """
    s = q.size
    a = 0.5 * (q.a_matrix + q.a_matrix.T)
    b = q.b_vector.copy()
    eigs = np.linalg.eigvalsh(a)
    norm = float(np.max(np.abs(eigs)))
    if float(eigs.min()) < -1e-8 * max(1.0, norm):
        raise ValueError(
            f"criterion matrix is not positive semi-definite (min eig {eigs.min():.3e})"
        )
    if s == 1:
        w = np.array([1.0])
        return WeightVector(w, q.evaluate(w), 0, 0.0, True)

    lip = float(np.max(np.abs(a).sum(axis=1)))  # diagonal-dominance bound on ||A||_2
    if lip <= 0.0:
        # A == 0: the criterion is affine; all mass goes to the best candidate
        if np.ptp(b) == 0.0:
            w = np.full(s, 1.0 / s)
        else:
            w = np.zeros(s)
            w[int(np.argmax(b))] = 1.0
        w = _renormalize_exact(w)
        return WeightVector(w, q.evaluate(w), 0, 0.0, True)

    an = a / lip
    bn = b / lip

    def fn(w: np.ndarray) -> float:
        return float(w @ an @ w - 2.0 * (bn @ w))

    w = np.full(s, 1.0 / s)
    f_cur = fn(w)
    small_steps = 0
    iterations = 0
    # gradient of fn is 2(An w - bn) with Lipschitz constant <= 2, so step 1/2
    for iterations in range(1, max_iter + 1):
        w_new = simplex_project(w - (an @ w - bn))
        f_new = fn(w_new)
        small_steps = small_steps + 1 if f_cur - f_new < 1e-12 else 0
        w, f_cur = w_new, f_new
        if small_steps >= 10:
            break

    polished = _polish_active_set(an, bn, w)
    if polished is not None and fn(polished) <= f_cur:
        w, f_cur = polished, fn(polished)

    w = _renormalize_exact(w)
    residual = _kkt_residual(an, bn, w)
    converged = residual <= _KKT_TOL
    if not converged:
        logger.warning(
            "simplex QP stopped after %d iterations with KKT residual %.3e",
            iterations,
            residual,
        )
    return WeightVector(w, q.evaluate(w), iterations, residual, converged)


def _weight_array(weights, size: int) -> np.ndarray:
    w = weights.weights if isinstance(weights, WeightVector) else np.asarray(weights, dtype=float)
    if w.shape != (size,):
        raise ValueError(f"got {w.shape[0]} weights for {size} candidates")
    return w


def averaged_predict(
    data: Dataset, candidates: CandidateSet, weights, x: np.ndarray
) -> QuantileGrid:
    """Weight-averaged prediction at a full-dimension query point x."""
    x = np.asarray(x, dtype=float)
    if x.shape != (data.p,):
        raise ValueError(f"query has shape {x.shape}, expected ({data.p},)")
    w = _weight_array(weights, len(candidates))
    fits = [
        fit_at(data, model, x[list(model.indices)])
        for model in candidates.models
    ]
    return isotonic_project(combine(w, fits))


@dataclass(frozen=True)
class CandidateCriteria:
    """In-sample residual scale and information criteria for one candidate."""

    label: str
    n_predictors: int
    sigma2_hat: float
    aic: float
    bic: float
    sigma2_clamped: bool


def information_criteria(
    data: Dataset, candidates: CandidateSet
) -> list[CandidateCriteria]:
    """Per-candidate mean squared Wasserstein residual and AIC/BIC scores."""
    n = data.n
    out = []
    for model, label in zip(candidates.models, candidates.labels):
        try:
            fits = leave_group_out_fits(data, model, folds=[])
        except FitError as exc:
            raise FitError(f"candidate '{label}': {exc}") from exc
        resid = np.stack([f.values for f in fits]) - data.response_values
        sigma2 = float(np.sum(resid * resid) / data.grid.m_points / n)
        clamped = sigma2 < SIGMA2_FLOOR
        sigma2_safe = max(sigma2, SIGMA2_FLOOR)
        p_s = model.n_predictors
        aic = float(np.log(sigma2_safe) + 2.0 * p_s / n)
        bic = float(np.log(sigma2_safe) + p_s * np.log(n) / n)
        out.append(
            CandidateCriteria(
                label=label,
                n_predictors=p_s,
                sigma2_hat=sigma2,
                aic=aic,
                bic=bic,
                sigma2_clamped=clamped,
            )
        )
    return out


def ic_weights(criteria: Sequence[CandidateCriteria], kind: str) -> WeightVector:
    """Candidate weights from information criteria.

    "sAIC" and "sBIC" weight proportionally to exp(-score/2) (computed with
    max subtraction so extreme scores cannot overflow); "EW" is uniform.
    """
    s = len(criteria)
    if s == 0:
        raise ValueError("no criteria given")
    if kind == "EW":
        w = np.full(s, 1.0 / s)
    elif kind in ("sAIC", "sBIC"):
        scores = np.array(
            [c.aic if kind == "sAIC" else c.bic for c in criteria], dtype=float
        )
        if not np.all(np.isfinite(scores)):
            raise ValueError("criteria scores must be finite")
        half = -0.5 * (scores - scores.min())
        w = np.exp(half)
    else:
        raise ValueError(f"unknown weighting kind {kind!r}")
    return WeightVector(w, float("nan"), 0, 0.0, True)


def ic_select(criteria: Sequence[CandidateCriteria], kind: str) -> int:
    """Index of the candidate with the smallest score; ties pick the earliest."""
    if kind not in ("AIC", "BIC"):
        raise ValueError(f"unknown selection kind {kind!r}")
    scores = np.array(
        [c.aic if kind == "AIC" else c.bic for c in criteria], dtype=float
    )
    if scores.size == 0:
        raise ValueError("no criteria given")
    if not np.all(np.isfinite(scores)):
        raise ValueError("criteria scores must be finite")
    return int(np.argmin(scores))
