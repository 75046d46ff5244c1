"""Monte Carlo harness for the correlated-predictor, Gaussian-response design.

Predictors are correlated uniforms on (-1, 1) built from an AR(1) Gaussian
copula. The response is a Gaussian distribution whose location depends on two
predictors and whose scale depends on a third, so candidate subsets that
contain all three are correctly specified. Replications draw a fresh training
sample plus one query point, fit every requested method, and score each
against the true conditional distribution by squared Wasserstein distance.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy.special import ndtr

from .averaging import (
    CandidateSet,
    WeightVector,
    averaged_predict,
    build_cv_quadratic,
    ic_select,
    ic_weights,
    information_criteria,
    solve_simplex_qp,
)
from .frechet import CandidateModel, Dataset, FitError, fit_at, make_folds
from .quantile import (
    ProbGrid,
    QuantileGrid,
    combine,
    gaussian_quantile,
    isotonic_project,
    wasserstein_sq,
)

__all__ = [
    "METHODS",
    "TRUE_PREDICTORS",
    "DgpConfig",
    "ExperimentConfig",
    "TrueRegression",
    "ReplicationResult",
    "RiskRow",
    "WeightRow",
    "ExperimentReport",
    "default_candidate_set",
    "correct_candidate_indices",
    "replication_rng",
    "gen_predictors",
    "gen_response",
    "run_replication",
    "run_experiment",
]

logger = logging.getLogger(__name__)

METHODS = ("CV", "sAIC", "sBIC", "EW", "AIC", "BIC", "Full", "Oracle")

# 0-based predictor columns that actually enter the response law
# (columns 0, 3 and 7 correspond to the 1-based names x1, x4 and x8)
TRUE_PREDICTORS = (0, 3, 7)


@dataclass(frozen=True)
class DgpConfig:
    """Parameters of the data-generating process.

    The response given X = x is Gaussian with mean mu0 + beta*(x4 + x8) plus
    N(0, v1) noise and scale drawn from a Gamma law with mean sigma0 + gamma*x1
    and variance v2. Setting v1 = v2 = 0 gives the noiseless limit.
    """

    n: int
    seed: int
    p: int = 10
    rho: float = 0.5
    mu0: float = 0.0
    sigma0: float = 3.0
    beta: float = 0.75
    gamma: float = 1.0
    v1: float = 1.0
    v2: float = 0.5

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError(f"n must be positive, got {self.n}")
        if self.p < max(TRUE_PREDICTORS) + 1:
            raise ValueError(f"p must be at least {max(TRUE_PREDICTORS) + 1}, got {self.p}")
        if not -1.0 < self.rho < 1.0:
            raise ValueError(f"rho must be in (-1, 1), got {self.rho}")
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"seed must fit in 64 unsigned bits, got {self.seed}")
        if self.sigma0 - abs(self.gamma) <= 0.0:
            raise ValueError(
                f"sigma0 - |gamma| must be positive so the scale stays positive "
                f"(got sigma0={self.sigma0}, gamma={self.gamma})"
            )
        if self.v1 < 0.0 or self.v2 < 0.0:
            raise ValueError(f"v1 and v2 must be non-negative, got {self.v1}, {self.v2}")
        for name in ("mu0", "sigma0", "beta", "gamma", "v1", "v2", "rho"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")


@dataclass(frozen=True)
class TrueRegression:
    """The true conditional distribution of the response at a predictor point."""

    config: DgpConfig

    def mean_location(self, x: np.ndarray) -> float:
        c = self.config
        return c.mu0 + c.beta * (x[3] + x[7])

    def mean_scale(self, x: np.ndarray) -> float:
        c = self.config
        return c.sigma0 + c.gamma * x[0]

    def __call__(self, x: np.ndarray, grid: ProbGrid) -> QuantileGrid:
        x = np.asarray(x, dtype=float)
        return gaussian_quantile(self.mean_location(x), self.mean_scale(x), grid)


def default_candidate_set(p: int = 10) -> CandidateSet:
    """Six nested-and-misspecified candidates over x1, x4, x8 plus the full model."""
    if p < 8:
        raise ValueError(f"default candidates need p >= 8, got {p}")
    return CandidateSet.from_indices(
        [[0], [3, 7], [0, 3], [0, 3, 7], [0, 3, 4, 7], list(range(p))]
    )


def correct_candidate_indices(candidates: CandidateSet) -> list[int]:
    """Positions of the correctly specified candidates (supersets of the
    truly relevant predictors)."""
    truth = set(TRUE_PREDICTORS)
    return [
        s
        for s, model in enumerate(candidates.models)
        if truth.issubset(model.indices)
    ]


@dataclass(frozen=True)
class ExperimentConfig:
    """Settings for one Monte Carlo comparison run."""

    dgp: DgpConfig
    candidates: CandidateSet
    n_values: tuple[int, ...] = (100, 200, 300)
    replications: int = 100
    k_folds: int = 10
    grid_m: int = 100
    methods: tuple[str, ...] = METHODS

    def __post_init__(self) -> None:
        if len(self.n_values) == 0 or any(n < 1 for n in self.n_values):
            raise ValueError(f"n_values must be positive, got {self.n_values}")
        if self.replications < 1:
            raise ValueError(f"replications must be >= 1, got {self.replications}")
        if self.k_folds < 2:
            raise ValueError(f"k_folds must be >= 2, got {self.k_folds}")
        if self.grid_m < 1:
            raise ValueError(f"grid_m must be >= 1, got {self.grid_m}")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ValueError(f"unknown methods {unknown}; valid: {list(METHODS)}")
        if len(self.methods) == 0:
            raise ValueError("need at least one method")


def replication_rng(master_seed: int, n: int, rep: int) -> np.random.Generator:
    """Independent, reproducible stream for one replication.

    Streams are spawned from the master seed keyed by (n, rep) through a
    counter-based Philox generator, so any subset of replications can be run
    in any order with identical results.
    """
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=(n, rep))
    return np.random.Generator(np.random.Philox(seq))


def gen_predictors(cfg: DgpConfig, rng: np.random.Generator) -> np.ndarray:
    """n x p matrix of correlated uniforms on (-1, 1).

    Latent Gaussians with cov(Z_j, Z_j') = rho^|j - j'| are pushed through the
    normal CDF, which makes every column marginally uniform while keeping the
    AR(1)-style dependence.
    """
    lags = np.abs(np.subtract.outer(np.arange(cfg.p), np.arange(cfg.p)))
    corr = cfg.rho ** lags
    chol = np.linalg.cholesky(corr)
    z = rng.standard_normal((cfg.n, cfg.p)) @ chol.T
    return 2.0 * ndtr(z) - 1.0


def gen_response(
    cfg: DgpConfig, x_row: np.ndarray, rng: np.random.Generator, grid: ProbGrid
) -> QuantileGrid:
    """Draw one Gaussian response distribution conditional on a predictor row."""
    x_row = np.asarray(x_row, dtype=float)
    loc_mean = cfg.mu0 + cfg.beta * (x_row[3] + x_row[7])
    scale_mean = cfg.sigma0 + cfg.gamma * x_row[0]
    if scale_mean <= 0.0:
        raise ValueError(f"conditional scale mean {scale_mean} is not positive")
    mu = loc_mean if cfg.v1 == 0.0 else rng.normal(loc_mean, np.sqrt(cfg.v1))
    if cfg.v2 == 0.0:
        sigma = scale_mean
    else:
        shape = scale_mean**2 / cfg.v2
        sigma = rng.gamma(shape, cfg.v2 / scale_mean)
    return gaussian_quantile(mu, sigma, grid)


@dataclass(frozen=True)
class ReplicationResult:
    """Per-method risks plus the CV weight diagnostics of one replication."""

    risks: dict[str, float]
    cv_weights: np.ndarray | None
    correct_weight_sum: float

    def __post_init__(self) -> None:
        for method, risk in self.risks.items():
            if risk < 0.0:
                raise ValueError(f"negative risk {risk} for {method}")
        if not np.isnan(self.correct_weight_sum):
            if not 0.0 <= self.correct_weight_sum <= 1.0 + 1e-12:
                raise ValueError(
                    f"correct-weight sum {self.correct_weight_sum} outside [0, 1]"
                )


def _generate_dataset(
    cfg: DgpConfig, grid: ProbGrid, rng: np.random.Generator
) -> Dataset:
    x = gen_predictors(cfg, rng)
    values = np.empty((cfg.n, grid.m_points))
    for i in range(cfg.n):
        values[i] = gen_response(cfg, x[i], rng, grid).values
    return Dataset(x, values, grid)


def run_replication(
    cfg: ExperimentConfig, n: int, rep_rng: np.random.Generator
) -> ReplicationResult:
    """Fit all configured methods on a fresh sample and score them at a fresh
    query point against the true conditional distribution."""
    grid = ProbGrid(cfg.grid_m)
    dgp = replace(cfg.dgp, n=n)
    data = _generate_dataset(dgp, grid, rep_rng)
    x_query = gen_predictors(replace(dgp, n=1), rep_rng)[0]
    truth = TrueRegression(dgp)(x_query, grid)

    candidates = cfg.candidates
    methods = cfg.methods

    fit_cache: dict[tuple[int, ...], QuantileGrid] = {}

    def candidate_fit(indices: tuple[int, ...]) -> QuantileGrid:
        if indices not in fit_cache:
            model = CandidateModel(indices)
            fit_cache[indices] = fit_at(data, model, x_query[list(indices)])
        return fit_cache[indices]

    needs_cv = "CV" in methods
    needs_ic = any(m in methods for m in ("sAIC", "sBIC", "AIC", "BIC"))

    cv_weights: WeightVector | None = None
    if needs_cv:
        folds = make_folds(n, cfg.k_folds)
        quad = build_cv_quadratic(data, candidates, folds)
        cv_weights = solve_simplex_qp(quad)

    criteria = information_criteria(data, candidates) if needs_ic else None

    candidate_grids = [candidate_fit(m.indices) for m in candidates.models]

    def averaged(weights) -> QuantileGrid:
        return isotonic_project(combine(weights, candidate_grids))

    risks: dict[str, float] = {}
    for method in methods:
        if method == "CV":
            pred = averaged(cv_weights.weights)
        elif method in ("sAIC", "sBIC"):
            pred = averaged(ic_weights(criteria, method).weights)
        elif method == "EW":
            pred = averaged(np.full(len(candidates), 1.0 / len(candidates)))
        elif method in ("AIC", "BIC"):
            chosen = ic_select(criteria, method)
            pred = candidate_grids[chosen]
        elif method == "Full":
            pred = candidate_fit(tuple(range(data.p)))
        else:  # Oracle
            pred = candidate_fit(TRUE_PREDICTORS)
        risks[method] = wasserstein_sq(pred, truth)

    if cv_weights is not None:
        correct = correct_candidate_indices(candidates)
        correct_sum = float(cv_weights.weights[correct].sum()) if correct else 0.0
        weights_out = cv_weights.weights
    else:
        correct_sum = float("nan")
        weights_out = None

    return ReplicationResult(
        risks=risks,
        cv_weights=weights_out,
        correct_weight_sum=correct_sum,
    )


@dataclass(frozen=True)
class RiskRow:
    n: int
    method: str
    mean_risk: float
    sd_risk: float
    failures: int


@dataclass(frozen=True)
class WeightRow:
    n: int
    mean_correct_weight_sum: float


@dataclass(frozen=True)
class ExperimentReport:
    """Aggregated Monte Carlo results, a pure function of the configuration."""

    config: ExperimentConfig
    risk_rows: tuple[RiskRow, ...]
    weight_rows: tuple[WeightRow, ...]
    failure_messages: tuple[str, ...] = ()


def _sd(values: np.ndarray) -> float:
    if values.size < 2:
        return float("nan")
    return float(np.std(values, ddof=1))


def run_experiment(
    cfg: ExperimentConfig,
    *,
    threads: int = 1,
    progress: Callable[[int, int], None] | None = None,
) -> ExperimentReport:
    """Run all replications for every sample size and aggregate risk tables.

    Replications use independent seed-derived streams and are reduced in
    replication order, so the report does not depend on the thread count.
    Failed replications are excluded from the averages and counted.
    """
    risk_rows: list[RiskRow] = []
    weight_rows: list[WeightRow] = []
    failures: list[str] = []
    total = len(cfg.n_values) * cfg.replications
    done = 0

    for n in cfg.n_values:
        def one(rep: int) -> ReplicationResult:
            return run_replication(cfg, n, replication_rng(cfg.dgp.seed, n, rep))

        results: list[ReplicationResult | Exception] = [None] * cfg.replications  # type: ignore[list-item]
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                futures = {rep: pool.submit(one, rep) for rep in range(cfg.replications)}
            for rep, fut in futures.items():
                results[rep] = fut.exception() or fut.result()
        else:
            for rep in range(cfg.replications):
                try:
                    results[rep] = one(rep)
                except FitError as exc:
                    results[rep] = exc

        ok: list[ReplicationResult] = []
        n_failed = 0
        for rep, res in enumerate(results):
            done += 1
            if isinstance(res, Exception):
                if not isinstance(res, FitError):
                    raise res
                n_failed += 1
                failures.append(f"n={n} replication={rep}: {res}")
                logger.warning("replication failed (n=%d, rep=%d): %s", n, rep, res)
            else:
                ok.append(res)
            if progress is not None:
                progress(done, total)
        if not ok:
            raise FitError(f"all {cfg.replications} replications failed at n={n}")

        for method in cfg.methods:
            vals = np.array([r.risks[method] for r in ok])
            risk_rows.append(
                RiskRow(n, method, float(vals.mean()), _sd(vals), n_failed)
            )
        sums = np.array([r.correct_weight_sum for r in ok])
        mean_sum = float(sums.mean()) if "CV" in cfg.methods else float("nan")
        weight_rows.append(WeightRow(n, mean_sum))

    return ExperimentReport(
        config=cfg,
        risk_rows=tuple(risk_rows),
        weight_rows=tuple(weight_rows),
        failure_messages=tuple(failures),
    )
