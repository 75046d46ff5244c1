"""Model averaging for global Frechet regression with distributional responses."""

from .quantile import (
    ProbGrid,
    QuantileGrid,
    RawQuantileGrid,
    combine,
    empirical_quantile,
    gaussian_quantile,
    isotonic_project,
    wasserstein_sq,
)
from .frechet import (
    CandidateModel,
    Dataset,
    DesignStats,
    FitError,
    SingularCovarianceError,
    design_stats,
    fit_at,
    leave_group_out_fits,
    make_folds,
    s_weights,
)
from .averaging import (
    CandidateCriteria,
    CandidateSet,
    CvQuadratic,
    WeightVector,
    averaged_predict,
    build_cv_quadratic,
    ic_select,
    ic_weights,
    information_criteria,
    simplex_project,
    solve_simplex_qp,
)
from .simulation import (
    METHODS,
    TRUE_PREDICTORS,
    DgpConfig,
    ExperimentConfig,
    ExperimentReport,
    ReplicationResult,
    TrueRegression,
    correct_candidate_indices,
    default_candidate_set,
    gen_predictors,
    gen_response,
    replication_rng,
    run_experiment,
    run_replication,
)

__version__ = "0.1.0"
