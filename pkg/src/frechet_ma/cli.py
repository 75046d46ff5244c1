"""Command-line entry point: `frechet-ma simulate|fit|predict`.

simulate  runs the Monte Carlo comparison harness and writes risk/weight
          tables plus a run_meta.json that reproduces the run byte-for-byte.
fit       fits the candidate models to CSV data, chooses cross-validation and
          information-criterion weights, and freezes the fit to model.json.
predict   evaluates a frozen model at new query points, optionally scoring
          squared prediction errors against supplied truth.

All file formats are owned by this module. Floats are written with 17
significant digits so re-reading them is lossless, and files are written
atomically (temp file + rename).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from csv import reader as csv_reader
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from scipy.linalg import cho_solve

from .averaging import (
    CandidateSet,
    ic_weights,
    information_criteria,
    build_cv_quadratic,
    solve_simplex_qp,
)
from .frechet import CandidateModel, Dataset, FitError, design_stats, make_folds
from .quantile import ProbGrid, _pava, empirical_quantile
from .simulation import (
    METHODS,
    DgpConfig,
    ExperimentConfig,
    run_experiment,
)

__all__ = ["main", "ConfigError"]

MODEL_FORMAT = "frechet-ma-model/1"
DEFAULT_SEED = 12345

_DGP_DEFAULTS = {
    "p": 10,
    "rho": 0.5,
    "mu0": 0.0,
    "sigma0": 3.0,
    "beta": 0.75,
    "gamma": 1.0,
    "v1": 1.0,
    "v2": 0.5,
}

# headline candidate set over 1-based predictor names x1..x10
_DEFAULT_CANDIDATES = [
    [1],
    [4, 8],
    [1, 4],
    [1, 4, 8],
    [1, 4, 5, 8],
    [1, 2, 3, 4, 5, 6, 7, 8, 9, 10],
]


class ConfigError(ValueError):
    """Invalid configuration or input file; maps to exit code 1."""


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    lines = [",".join(header)]
    for row in rows:
        cells = [cell if isinstance(cell, str) else _fmt(cell) if isinstance(cell, float) else str(cell) for cell in row]
        lines.append(",".join(cells))
    _atomic_write(path, "\n".join(lines) + "\n")


def _write_json(path: Path, payload: dict) -> None:
    _atomic_write(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# configuration files
# ---------------------------------------------------------------------------

def _load_json(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            obj = json.load(handle)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})")
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return obj


def _reject_unknown(obj: dict, allowed: Sequence[str], where: str) -> None:
    for key in obj:
        if key not in allowed:
            raise ConfigError(f"{where}: unknown key {key!r} (allowed: {sorted(allowed)})")


def _as_int(value: Any, where: str, minimum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{where}: expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{where}: must be >= {minimum}, got {value}")
    return value


def _as_number(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}: expected a number, got {value!r}")
    return float(value)


def _as_bool(value: Any, where: str) -> bool:
    if not isinstance(value, bool):
        raise ConfigError(f"{where}: expected true/false, got {value!r}")
    return value


def _parse_candidates(raw: Any, p: int | None, where: str) -> list[list[int]]:
    if not isinstance(raw, list) or not raw:
        raise ConfigError(f"{where}: expected a non-empty list of index lists")
    out: list[list[int]] = []
    for pos, entry in enumerate(raw):
        loc = f"{where}[{pos}]"
        if not isinstance(entry, list) or not entry:
            raise ConfigError(f"{loc}: expected a non-empty list of 1-based indices")
        idx = [_as_int(v, loc, minimum=1) for v in entry]
        if len(set(idx)) != len(idx):
            raise ConfigError(f"{loc}: duplicate predictor index")
        if p is not None and max(idx) > p:
            raise ConfigError(f"{loc}: index {max(idx)} out of range for p={p}")
        out.append(sorted(idx))
    if len({tuple(c) for c in out}) != len(out):
        raise ConfigError(f"{where}: candidate models must be pairwise distinct")
    return out


def _parse_dgp(raw: Any) -> dict:
    if raw is None:
        return dict(_DGP_DEFAULTS)
    if not isinstance(raw, dict):
        raise ConfigError("dgp: expected an object")
    _reject_unknown(raw, list(_DGP_DEFAULTS), "dgp")
    dgp = dict(_DGP_DEFAULTS)
    for key, value in raw.items():
        if key == "p":
            dgp[key] = _as_int(value, "dgp.p", minimum=1)
        else:
            dgp[key] = _as_number(value, f"dgp.{key}")
    if not -1.0 < dgp["rho"] < 1.0:
        raise ConfigError(f"dgp.rho: must be in (-1, 1), got {dgp['rho']}")
    return dgp


def resolve_simulate_config(raw: dict, overrides: argparse.Namespace) -> dict:
    """Merge defaults, the config file, and CLI overrides; validate everything."""
    allowed = [
        "seed",
        "grid_m",
        "k_folds",
        "n_values",
        "replications",
        "methods",
        "candidates",
        "dgp",
    ]
    _reject_unknown(raw, allowed, "config")
    dgp = _parse_dgp(raw.get("dgp"))
    cfg = {
        "seed": _as_int(raw.get("seed", DEFAULT_SEED), "seed", minimum=0),
        "grid_m": _as_int(raw.get("grid_m", 100), "grid_m", minimum=1),
        "k_folds": _as_int(raw.get("k_folds", 10), "k_folds", minimum=2),
        "replications": _as_int(raw.get("replications", 100), "replications", minimum=1),
        "dgp": dgp,
    }
    n_values = raw.get("n_values", [100, 200, 300])
    if not isinstance(n_values, list) or not n_values:
        raise ConfigError("n_values: expected a non-empty list of integers")
    cfg["n_values"] = [_as_int(v, "n_values", minimum=2) for v in n_values]
    methods = raw.get("methods", list(METHODS))
    if not isinstance(methods, list) or not methods:
        raise ConfigError("methods: expected a non-empty list")
    for m in methods:
        if m not in METHODS:
            raise ConfigError(f"methods: unknown method {m!r} (valid: {list(METHODS)})")
    cfg["methods"] = methods
    cfg["candidates"] = _parse_candidates(
        raw.get("candidates", _DEFAULT_CANDIDATES), dgp["p"], "candidates"
    )
    for name in ("grid_m", "k_folds", "seed"):
        value = getattr(overrides, name, None)
        if value is not None:
            cfg[name] = value
    return cfg


def _experiment_from_config(cfg: dict) -> ExperimentConfig:
    dgp_cfg = DgpConfig(n=max(cfg["n_values"]), seed=cfg["seed"], **cfg["dgp"])
    candidates = CandidateSet.from_indices(cfg["candidates"], one_based=True)
    try:
        return ExperimentConfig(
            dgp=dgp_cfg,
            candidates=candidates,
            n_values=tuple(cfg["n_values"]),
            replications=cfg["replications"],
            k_folds=cfg["k_folds"],
            grid_m=cfg["grid_m"],
            methods=tuple(cfg["methods"]),
        )
    except ValueError as exc:
        raise ConfigError(str(exc))


def resolve_fit_config(raw: dict, overrides: argparse.Namespace) -> dict:
    allowed = ["seed", "grid_m", "k_folds", "candidates", "shuffle_folds"]
    _reject_unknown(raw, allowed, "config")
    cfg = {
        "seed": _as_int(raw.get("seed", DEFAULT_SEED), "seed", minimum=0),
        "grid_m": _as_int(raw["grid_m"], "grid_m", minimum=1) if "grid_m" in raw else None,
        "k_folds": _as_int(raw.get("k_folds", 10), "k_folds", minimum=2),
        "shuffle_folds": _as_bool(raw.get("shuffle_folds", False), "shuffle_folds"),
    }
    if "candidates" not in raw:
        raise ConfigError("candidates: required for fit (list of 1-based index lists)")
    cfg["candidates"] = _parse_candidates(raw["candidates"], None, "candidates")
    for name in ("grid_m", "k_folds", "seed"):
        value = getattr(overrides, name, None)
        if value is not None:
            cfg[name] = value
    return cfg


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

def _read_rows(path: str) -> list[list[str]]:
    try:
        with open(path, "r", encoding="utf-8", newline="") as handle:
            rows = [row for row in csv_reader(handle) if row]
    except FileNotFoundError:
        raise ConfigError(f"input file not found: {path}")
    if len(rows) < 2:
        raise ConfigError(f"{path}: expected a header row plus at least one data row")
    return rows


def _parse_float(cell: str, where: str) -> float:
    try:
        value = float(cell)
    except ValueError:
        raise ConfigError(f"{where}: not a number: {cell!r}")
    if not np.isfinite(value):
        raise ConfigError(f"{where}: value must be finite, got {cell!r}")
    return value


def read_matrix_csv(path: str) -> np.ndarray:
    """Numeric CSV with one header row; returns the data as an n x p array."""
    rows = _read_rows(path)
    width = len(rows[0])
    data = np.empty((len(rows) - 1, width))
    for i, row in enumerate(rows[1:], start=1):
        if len(row) != width:
            raise ConfigError(f"{path} row {i}: expected {width} columns, got {len(row)}")
        data[i - 1] = [_parse_float(c, f"{path} row {i}") for c in row]
    return data


def _midpoint_levels(m: int) -> np.ndarray:
    return (2.0 * np.arange(1, m + 1) - 1.0) / (2.0 * m)


def read_responses_csv(path: str, grid_m: int | None) -> tuple[np.ndarray, ProbGrid]:
    """Quantile-grid responses: header t_1..t_M (or the numeric grid levels),
    then one non-decreasing row of quantile values per observation."""
    rows = _read_rows(path)
    header = rows[0]
    m = len(header)
    named = [f"t_{j}" for j in range(1, m + 1)]
    if header != named:
        try:
            levels = np.array([float(c) for c in header])
        except ValueError:
            raise ConfigError(
                f"{path}: header must be t_1..t_{m} or the numeric grid levels"
            )
        if np.max(np.abs(levels - _midpoint_levels(m))) > 1e-9:
            raise ConfigError(
                f"{path}: header levels do not match the midpoint grid with M={m}"
            )
    if grid_m is not None and grid_m != m:
        raise ConfigError(f"grid_m: config says {grid_m} but {path} has {m} columns")
    values = np.empty((len(rows) - 1, m))
    for i, row in enumerate(rows[1:], start=1):
        if len(row) != m:
            raise ConfigError(f"{path} row {i}: expected {m} columns, got {len(row)}")
        values[i - 1] = [_parse_float(c, f"{path} row {i}") for c in row]
        if np.any(np.diff(values[i - 1]) < 0.0):
            raise ConfigError(f"{path} row {i}: quantile values are not non-decreasing")
    return values, ProbGrid(m)


def read_samples_csv(path: str, grid: ProbGrid) -> np.ndarray:
    """Ragged per-row sample lists (header line ignored), turned into quantile
    grids via the empirical quantile function."""
    rows = _read_rows(path)
    values = np.empty((len(rows) - 1, grid.m_points))
    for i, row in enumerate(rows[1:], start=1):
        samples = [_parse_float(c, f"{path} row {i}") for c in row if c.strip() != ""]
        if not samples:
            raise ConfigError(f"{path} row {i}: no samples")
        values[i - 1] = empirical_quantile(samples, grid).values
    return values


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def cmd_simulate(args: argparse.Namespace) -> int:
    raw = _load_json(args.config) if args.config else {}
    cfg = resolve_simulate_config(raw, args)
    experiment = _experiment_from_config(cfg)
    out_dir = Path(args.out)

    report = run_experiment(experiment, threads=args.threads)

    risk_rows = [
        (row.n, row.method, float(row.mean_risk), float(row.sd_risk), row.failures)
        for row in report.risk_rows
    ]
    _write_csv(
        out_dir / "risk_table.csv",
        ["n", "method", "mean_risk", "sd_risk", "failures"],
        risk_rows,
    )
    _write_csv(
        out_dir / "weights_table.csv",
        ["n", "mean_correct_weight_sum"],
        [(row.n, float(row.mean_correct_weight_sum)) for row in report.weight_rows],
    )
    _write_json(
        out_dir / "run_meta.json",
        {
            "tool": "frechet-ma",
            "command": "simulate",
            "config": cfg,
            "ic_dimension": "number of predictors in the candidate",
            "sd_definition": "across-replication standard deviation (ddof=1)",
            "failures": list(report.failure_messages),
        },
    )
    print(f"wrote {out_dir / 'risk_table.csv'}")
    print(f"wrote {out_dir / 'weights_table.csv'}")
    print(f"wrote {out_dir / 'run_meta.json'}")
    return 0


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------

def _candidate_parameters(data: Dataset, indices_0: Sequence[int]) -> dict:
    """Frozen linear form of one candidate's full-sample fit.

    The fitted raw curve at x is intercept_curve + (x - mean) @ coef; the
    monotone projection of that curve is the prediction.
    """
    stats = design_stats(data, CandidateModel(tuple(indices_0)))
    rows = data.predictors[:, list(indices_0)]
    centered = rows - stats.mean
    cross = centered.T @ data.response_values / data.n
    coef = cho_solve((stats.cov_factor, True), cross)
    intercept = data.response_values.mean(axis=0)
    return {
        "mean": [float(v) for v in stats.mean],
        "intercept_curve": [float(v) for v in intercept],
        "coef": [[float(v) for v in row] for row in coef],
        "jitter": float(stats.jitter_applied),
    }


def _predict_rows(model: dict, queries: np.ndarray) -> np.ndarray:
    """Averaged predictions (one monotone row per query) from a frozen model."""
    p = model["p"]
    if queries.shape[1] != p:
        raise ConfigError(
            f"query has {queries.shape[1]} columns but the model was trained with p={p}"
        )
    weights = np.asarray(model["cv_weights"])
    m = model["grid_m"]
    out = np.empty((queries.shape[0], m))
    for i, x in enumerate(queries):
        parts = np.empty((len(model["candidates"]), m))
        for s, cand in enumerate(model["candidates"]):
            idx = [j - 1 for j in cand["indices"]]
            raw = np.asarray(cand["intercept_curve"]) + (
                x[idx] - np.asarray(cand["mean"])
            ) @ np.asarray(cand["coef"])
            parts[s] = _pava(raw)
        out[i] = _pava(weights @ parts)
    return out


def cmd_fit(args: argparse.Namespace) -> int:
    cfg = resolve_fit_config(_load_json(args.config), args)
    predictors = read_matrix_csv(args.predictors)
    n, p = predictors.shape

    if args.from_samples:
        grid = ProbGrid(cfg["grid_m"] if cfg["grid_m"] else 100)
        response_values = read_samples_csv(args.responses, grid)
    else:
        response_values, grid = read_responses_csv(args.responses, cfg["grid_m"])
    if response_values.shape[0] != n:
        raise ConfigError(
            f"{args.predictors} has {n} rows but {args.responses} has "
            f"{response_values.shape[0]}"
        )

    candidates_1 = _parse_candidates(cfg["candidates"], p, "candidates")
    candidate_set = CandidateSet.from_indices(candidates_1, one_based=True)

    out_dir = Path(args.out)
    rows_all = np.arange(n)
    split_seed = args.split_seed if args.split_seed is not None else cfg["seed"]
    if args.split is not None:
        if not 1 <= args.split < n:
            raise ConfigError(f"--split: need 1 <= n_train < {n}, got {args.split}")
        perm = np.random.default_rng(split_seed).permutation(n)
        train_rows = np.sort(perm[: args.split])
        test_rows = np.sort(perm[args.split :])
    else:
        train_rows = rows_all
        test_rows = np.array([], dtype=int)

    data = Dataset(predictors[train_rows], response_values[train_rows], grid)

    k = cfg["k_folds"]
    if k > data.n:
        raise ConfigError(f"k_folds: {k} exceeds the {data.n} training rows")
    shuffle = cfg["seed"] if cfg["shuffle_folds"] else None
    folds = make_folds(data.n, k, shuffle_seed=shuffle)

    quad = build_cv_quadratic(data, candidate_set, folds)
    cv = solve_simplex_qp(quad)
    criteria = information_criteria(data, candidate_set)
    saic = ic_weights(criteria, "sAIC")
    sbic = ic_weights(criteria, "sBIC")

    weight_rows = []
    for s, crit in enumerate(criteria):
        weight_rows.append(
            (
                crit.label,
                float(cv.weights[s]),
                float(saic.weights[s]),
                float(sbic.weights[s]),
                float(crit.aic),
                float(crit.bic),
                float(crit.sigma2_hat),
            )
        )
    _write_csv(
        out_dir / "weights.csv",
        ["candidate", "cv_weight", "saic_weight", "sbic_weight", "aic", "bic", "sigma2_hat"],
        weight_rows,
    )

    model = {
        "format": MODEL_FORMAT,
        "grid_m": grid.m_points,
        "p": p,
        "n_train": int(data.n),
        "k_folds": k,
        "seed": cfg["seed"],
        "shuffle_folds": cfg["shuffle_folds"],
        "ic_dimension": "number of predictors in the candidate",
        "cv_objective": float(cv.objective),
        "cv_kkt_residual": float(cv.kkt_residual),
        "cv_weights": [float(w) for w in cv.weights],
        "saic_weights": [float(w) for w in saic.weights],
        "sbic_weights": [float(w) for w in sbic.weights],
        "candidates": [
            {
                "label": candidate_set.labels[s],
                "indices": candidates_1[s],
                **_candidate_parameters(data, [j - 1 for j in candidates_1[s]]),
            }
            for s in range(len(candidate_set))
        ],
    }
    _write_json(out_dir / "model.json", model)
    print(f"wrote {out_dir / 'weights.csv'}")
    print(f"wrote {out_dir / 'model.json'}")

    if args.split is not None:
        _write_json(
            out_dir / "split.json",
            {
                "split_seed": int(split_seed),
                "train_rows": [int(r) + 1 for r in train_rows],
                "test_rows": [int(r) + 1 for r in test_rows],
            },
        )
        preds = _predict_rows(model, predictors[test_rows])
        spe_rows = []
        for pos, row in enumerate(test_rows):
            diff = preds[pos] - response_values[row]
            spe = float(np.sum(diff * diff) / grid.m_points)
            spe_rows.append((int(row) + 1, spe))
        _write_csv(out_dir / "test_spe.csv", ["row_id", "spe"], spe_rows)
        mean_spe = float(np.mean([r[1] for r in spe_rows])) if spe_rows else float("nan")
        print(f"wrote {out_dir / 'split.json'}")
        print(f"wrote {out_dir / 'test_spe.csv'} (mean SPE {mean_spe:.6g})")
    return 0


# ---------------------------------------------------------------------------
# predict
# ---------------------------------------------------------------------------

def _load_model(path: str) -> dict:
    model = _load_json(path)
    if model.get("format") != MODEL_FORMAT:
        raise ConfigError(f"{path}: not a {MODEL_FORMAT} file")
    return model


def cmd_predict(args: argparse.Namespace) -> int:
    model = _load_model(args.model)
    queries = read_matrix_csv(args.query)
    preds = _predict_rows(model, queries)
    m = model["grid_m"]

    out_path = Path(args.out)
    header = ["row_id"] + [f"q_{j}" for j in range(1, m + 1)]
    rows = [[i + 1] + [float(v) for v in preds[i]] for i in range(preds.shape[0])]
    _write_csv(out_path, header, rows)
    print(f"wrote {out_path}")

    if args.truth is not None:
        truth_values, truth_grid = read_responses_csv(args.truth, m)
        if truth_values.shape[0] != preds.shape[0]:
            raise ConfigError(
                f"{args.truth} has {truth_values.shape[0]} rows but there are "
                f"{preds.shape[0]} queries"
            )
        diffs = preds - truth_values
        spes = np.sum(diffs * diffs, axis=1) / m
        spe_path = out_path.with_name(out_path.stem + "_spe.csv")
        _write_csv(
            spe_path,
            ["row_id", "spe"],
            [(i + 1, float(spes[i])) for i in range(spes.size)],
        )
        print(f"wrote {spe_path} (mean SPE {float(spes.mean()):.6g})")
    return 0


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="frechet-ma",
        description="Cross-validated model averaging for distributional regression",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run the Monte Carlo comparison harness")
    sim.add_argument("--config", help="JSON config (defaults reproduce the headline run)")
    sim.add_argument("--out", required=True, help="output directory")
    sim.add_argument("--threads", type=int, default=1)
    sim.add_argument("--grid-m", dest="grid_m", type=int)
    sim.add_argument("--k-folds", dest="k_folds", type=int)
    sim.add_argument("--seed", type=int)
    sim.set_defaults(func=cmd_simulate)

    fit = sub.add_parser("fit", help="fit candidate models to CSV data")
    fit.add_argument("predictors", help="CSV: header row, then n rows of p numbers")
    fit.add_argument("responses", help="CSV of quantile rows (or samples with --from-samples)")
    fit.add_argument("--config", required=True, help="JSON config with the candidate sets")
    fit.add_argument("--out", required=True, help="output directory")
    fit.add_argument("--grid-m", dest="grid_m", type=int)
    fit.add_argument("--k-folds", dest="k_folds", type=int)
    fit.add_argument("--seed", type=int)
    fit.add_argument(
        "--from-samples",
        action="store_true",
        help="responses are ragged sample lists; build empirical quantile grids",
    )
    fit.add_argument("--split", type=int, help="train on a random subset of this size")
    fit.add_argument("--split-seed", dest="split_seed", type=int)
    fit.set_defaults(func=cmd_fit)

    pred = sub.add_parser("predict", help="predict from a frozen model.json")
    pred.add_argument("model", help="model.json written by fit")
    pred.add_argument("query", help="CSV of query predictor rows")
    pred.add_argument("--out", required=True, help="output CSV of quantile grids")
    pred.add_argument("--truth", help="optional truth CSV; also writes per-row SPE")
    pred.set_defaults(func=cmd_predict)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
