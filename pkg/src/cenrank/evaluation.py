"""Mean-absolute-error evaluation, cross-validated grid search and reports.

The grid search iterates duration x rank x lambda x method. For each
duration the windows and folds are drawn once so every grid point sees the
identical partition (paired comparison), and within a fold the imputer is
fitted on training windows only; test windows are filled row by row from
the fitted imputer, never touching the training state.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import baselines, solver
from .cohort import (
    Cohort,
    DesignSet,
    WindowSample,
    assemble_design,
    extract_windows,
    imputed_copy,
    split_folds,
    vectorize,
)
from .errors import DataError, UndefinedMetricError
from .imputation import build_imputation_matrix, fill_windows

METHODS = ("censored_lowrank", "ols", "svr")

FMT = "%.17g"


def _fmt(x) -> str:
    return FMT % float(x)


@dataclass
class Grid:
    durations: list[int]
    ranks: list[int]
    lambdas: list[float]


@dataclass
class CvEntry:
    duration: int
    rank: int
    lambda_: float
    method: str
    fold_maes: np.ndarray
    mean_mae: float


@dataclass
class CvReport:
    entries: list[CvEntry]
    seed: int
    k: int
    split_unit: str

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "k": self.k,
            "split_unit": self.split_unit,
            "entries": [
                {
                    "duration": e.duration,
                    "rank": e.rank,
                    "lambda": e.lambda_,
                    "method": e.method,
                    "fold_maes": [float(v) for v in e.fold_maes],
                    "mean_mae": e.mean_mae,
                }
                for e in self.entries
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CvReport":
        entries = [
            CvEntry(
                duration=int(e["duration"]),
                rank=int(e["rank"]),
                lambda_=float(e["lambda"]),
                method=str(e["method"]),
                fold_maes=np.asarray(e["fold_maes"], dtype=float),
                mean_mae=float(e["mean_mae"]),
            )
            for e in d["entries"]
        ]
        return cls(entries=entries, seed=int(d["seed"]), k=int(d["k"]), split_unit=str(d["split_unit"]))


def mae(predictions: np.ndarray, samples: list[WindowSample]) -> float:
    """Mean absolute error over the complete samples; censored ones are excluded."""
    predictions = np.asarray(predictions, dtype=float)
    if predictions.size != len(samples):
        raise DataError(f"{predictions.size} predictions for {len(samples)} samples")
    complete = np.array([not s.censored for s in samples], dtype=bool)
    if not complete.any():
        raise UndefinedMetricError("MAE is undefined without complete samples")
    labels = np.array([s.y for s in samples], dtype=float)
    return float(np.mean(np.abs(predictions[complete] - labels[complete])))


def impute_split(windows, train_idx, test_idx, imputer):
    """Fit a fresh imputer on the training windows and fill both sides.

    Returns (train_windows, test_windows, fitted_imputer); the test fill
    uses only per-row transforms of the fitted imputer.
    """
    train = [windows[i] for i in train_idx]
    test = [windows[i] for i in test_idx]
    imp = imputer.clone()
    matrix = build_imputation_matrix(train)
    imp.fit(matrix)
    train_filled = fill_windows(train, imp.completed, matrix.row_index)
    test_filled = []
    for w in test:
        x = np.vstack([imp.transform_row(w.x[t], w.x_mask[t]) for t in range(w.x.shape[0])])
        test_filled.append(imputed_copy(w, x))
    return train_filled, test_filled, imp


def fit_method(design: DesignSet, method: str, rank: int, lambda_: float,
               solver_options: solver.SolverOptions | None = None,
               svr_options: baselines.SvrOptions | None = None):
    """Fit one configuration; rank only applies to the censored_lowrank method."""
    if method == "censored_lowrank":
        params, _ = solver.fit_pgd(design, lambda_, rank, solver_options)
        return params
    if method == "ols":
        return baselines.ols_fit(design, lambda_, censored_mode="weighted")
    if method == "svr":
        return baselines.svr_fit(design, lambda_=lambda_, censored_mode="weighted", options=svr_options)
    raise ValueError(f"unknown method {method!r}")


def predict_columns(model, X: np.ndarray) -> np.ndarray:
    """Predictions for vectorized samples stacked as columns of X."""
    w_vec = vectorize(model.w) if hasattr(model, "w") else model.w_vec
    return X.T @ w_vec + model.b


def predict_windows(model, samples: list[WindowSample]) -> np.ndarray:
    if not samples:
        return np.zeros(0)
    return predict_columns(model, np.column_stack([vectorize(s.x) for s in samples]))


def cross_validate(cohort: Cohort, grid: Grid, methods, imputer, k: int = 5,
                   split_unit: str = "sample", seed: int = 0, stride: int = 1,
                   horizon: float = 21, solver_options=None, svr_options=None,
                   n_jobs: int = 1) -> CvReport:
    """k-fold grid search over duration x rank x lambda for each method.

    Every fold serves as the test set once. Fold partitions, imputations
    and designs are computed once per duration and shared across all grid
    points and methods, so the comparison is paired. Deterministic given
    the seed.
    """
    methods = list(methods)
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}")
    if not (grid.durations and grid.ranks and grid.lambdas and methods):
        raise ValueError("grid and methods must be nonempty")

    entries = []
    for T in grid.durations:
        windows = extract_windows(cohort, T, stride=stride, horizon=horizon)
        if len(windows) < k:
            raise DataError(f"duration {T} yields {len(windows)} windows, fewer than k={k}")
        folds = split_folds(windows, k, unit=split_unit, seed=seed)
        all_idx = np.arange(len(windows))
        prepared = []
        for fold in folds:
            train_idx = np.setdiff1d(all_idx, fold)
            train_filled, test_filled, _ = impute_split(windows, train_idx, fold, imputer)
            prepared.append((assemble_design(train_filled), test_filled))

        jobs = []
        for rank in grid.ranks:
            for lam in grid.lambdas:
                for method in methods:
                    jobs.append((T, rank, lam, method))

        def run_point(point):
            T_, rank, lam, method = point
            fold_maes = []
            for design, test_filled in prepared:
                try:
                    model = fit_method(design, method, rank, lam, solver_options, svr_options)
                except Exception as exc:
                    exc.args = (f"grid point (duration={T_}, rank={rank}, lambda={lam}, method={method}): {exc}",)
                    raise
                fold_maes.append(mae(predict_windows(model, test_filled), test_filled))
            fold_maes = np.asarray(fold_maes)
            return CvEntry(T_, rank, lam, method, fold_maes, float(np.mean(fold_maes)))

        if n_jobs > 1:
            with ThreadPoolExecutor(max_workers=n_jobs) as pool:
                entries.extend(pool.map(run_point, jobs))
        else:
            entries.extend(run_point(p) for p in jobs)

    return CvReport(entries=entries, seed=seed, k=k, split_unit=split_unit)


@dataclass
class GridReport:
    grid_rows: list[dict]
    lambda_series: list[dict]
    duration_series: list[dict]
    best: CvEntry


def grid_report(report: CvReport) -> GridReport:
    """Tabulate the CV grid, flag the best cell and build plottable series.

    The minimum mean MAE wins; ties break toward the lexicographically
    smallest (duration, rank, lambda, method). The lambda and duration
    series average mean MAE over the remaining grid axes per method.
    """
    if not report.entries:
        raise DataError("empty CV report")
    best = min(report.entries, key=lambda e: (e.mean_mae, e.duration, e.rank, e.lambda_, e.method))
    rows = []
    for e in report.entries:
        row = {"duration": e.duration, "rank": e.rank, "lambda": e.lambda_, "method": e.method}
        for i, v in enumerate(e.fold_maes):
            row[f"fold_{i + 1}"] = float(v)
        row["mean_mae"] = e.mean_mae
        row["is_best"] = int(e is best)
        rows.append(row)

    def series(axis):
        keys = sorted({(e.method, getattr(e, axis)) for e in report.entries})
        out = []
        for method, value in keys:
            vals = [e.mean_mae for e in report.entries if e.method == method and getattr(e, axis) == value]
            out.append({"method": method, axis: value, "mean_mae": float(np.mean(vals))})
        return out

    return GridReport(
        grid_rows=rows,
        lambda_series=series("lambda_"),
        duration_series=series("duration"),
        best=best,
    )


def coefficient_report(params, variable_names, top_n: int = 20):
    """Entries of w ranked by decreasing coefficient value.

    Returns (variable, day_offset, coefficient) tuples; day_offset counts
    from the start of the window. Ties keep row-major order.
    """
    w = np.asarray(params.w)
    T, P = w.shape
    if len(variable_names) != P:
        raise DataError(f"{len(variable_names)} variable names for {P} columns")
    flat = [(variable_names[p], t, float(w[t, p])) for t in range(T) for p in range(P)]
    ranked = sorted(flat, key=lambda item: -item[2])
    return ranked[:top_n]


def onset_distribution(params, samples: list[WindowSample], bins=20):
    """Histogram the predicted values of the complete and censored groups.

    Shared bin edges span all predictions; returns (edges, complete_counts,
    censored_counts). Group counts always sum to the group sizes.
    """
    preds = predict_windows(params, samples)
    censored = np.array([s.censored for s in samples], dtype=bool)
    edges = np.histogram_bin_edges(preds, bins=bins)
    complete_counts, _ = np.histogram(preds[~censored], bins=edges)
    censored_counts, _ = np.histogram(preds[censored], bins=edges)
    return edges, complete_counts, censored_counts


def write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def write_report_csvs(gr: GridReport, k: int, out_dir):
    """Write grid.csv, lambda_curve.csv and duration_curve.csv under out_dir."""
    fold_cols = [f"fold_{i + 1}" for i in range(k)]
    header = ["duration", "rank", "lambda", "method"] + fold_cols + ["mean_mae", "is_best"]
    rows = []
    for r in gr.grid_rows:
        rows.append(
            [r["duration"], r["rank"], _fmt(r["lambda"]), r["method"]]
            + [_fmt(r[c]) for c in fold_cols]
            + [_fmt(r["mean_mae"]), r["is_best"]]
        )
    write_csv(f"{out_dir}/grid.csv", header, rows)
    write_csv(
        f"{out_dir}/lambda_curve.csv",
        ["method", "lambda", "mean_mae"],
        [[s["method"], _fmt(s["lambda_"]), _fmt(s["mean_mae"])] for s in gr.lambda_series],
    )
    write_csv(
        f"{out_dir}/duration_curve.csv",
        ["method", "duration", "mean_mae"],
        [[s["method"], s["duration"], _fmt(s["mean_mae"])] for s in gr.duration_series],
    )


def write_coefficients_csv(path, ranked):
    write_csv(path, ["variable", "day_offset", "coefficient"],
              [[name, off, _fmt(coef)] for name, off, coef in ranked])


def write_onset_hist_csv(path, edges, complete_counts, censored_counts):
    rows = [
        [_fmt(edges[i]), _fmt(edges[i + 1]), int(complete_counts[i]), int(censored_counts[i])]
        for i in range(len(complete_counts))
    ]
    write_csv(path, ["bin_left", "bin_right", "complete_count", "censored_count"], rows)


def save_cv_report(report: CvReport, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_cv_report(path) -> CvReport:
    with open(path, "r", encoding="utf-8") as fh:
        return CvReport.from_dict(json.load(fh))
