"""Missing-value imputation for stacked daily observation vectors.

The main method is bounded low-rank matrix completion: alternate a rank-r
SVD truncation of the current matrix with a box-constrained refill of the
missing cells, where each variable's box is the observed min/max of its
column. Test-time vectors are filled by projecting onto the fitted daily
basis under the same bounds. Column-mean and KNN imputers are provided as
benchmarks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cohort import WindowSample, imputed_copy
from .errors import EmptyColumnError, NumericalError

BMC_TOL = 1e-6
BMC_MAX_ITER = 500
IMPUTE_TOL = 1e-8
IMPUTE_MAX_ITER = 200


@dataclass
class ImputationMatrix:
    """Person-day observation vectors stacked row-wise (N x P)."""

    X: np.ndarray
    mask: np.ndarray
    row_index: list[tuple[str, int]]


@dataclass
class BmcModel:
    """Fitted completion model: orthonormal daily basis plus per-variable
    bounds and training column means (used to seed test-time imputation)."""

    basis: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    rank: int
    col_means: np.ndarray


def compute_bounds(X: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Observed per-column min and max; raises EmptyColumn for all-missing columns."""
    X = np.asarray(X, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    _check_columns(mask)
    Xm = np.where(mask, X, np.nan)
    with np.errstate(invalid="ignore"):
        lower = np.nanmin(Xm, axis=0)
        upper = np.nanmax(Xm, axis=0)
    return lower, upper


def _check_columns(mask):
    empty = np.flatnonzero(~mask.any(axis=0))
    if empty.size:
        raise EmptyColumnError(f"columns with no observed entries: {empty.tolist()}")


def _column_means(X, mask):
    _check_columns(mask)
    with np.errstate(invalid="ignore"):
        return np.nansum(np.where(mask, X, 0.0), axis=0) / mask.sum(axis=0)


def _truncated_svd(X, r):
    U, s, Vt = np.linalg.svd(X, full_matrices=False)
    k = min(r, s.size)
    M = (U[:, :k] * s[:k]) @ Vt[:k]
    return M, Vt[:k].T


def bmc_fit(
    X: np.ndarray,
    mask: np.ndarray,
    r: int,
    tol: float = BMC_TOL,
    max_iter: int = BMC_MAX_ITER,
    bounds: tuple[np.ndarray, np.ndarray] | None = None,
    trace_out: list | None = None,
) -> tuple[np.ndarray, BmcModel]:
    """Bounded rank-r completion of the missing entries of X.

    Observed entries are never modified. Missing entries start at the
    column means and are refreshed each iteration with the rank-r SVD
    truncation of the current matrix, clamped to [lower, upper]. The fit
    objective ||X - M||_F^2 is non-increasing; iteration stops when its
    relative decrease drops below tol. `bounds` overrides the observed
    min/max boxes (used to study the unconstrained behaviour); `trace_out`,
    if given, collects the per-iteration objective values.
    """
    X = np.array(X, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if r < 1 or r > min(X.shape):
        raise ValueError(f"rank {r} must lie in [1, min{X.shape}]")
    if X.shape != mask.shape:
        raise ValueError("X and mask shapes differ")
    if not np.all(np.isfinite(X[mask])):
        raise NumericalError("observed entries contain non-finite values")
    if bounds is None:
        lower, upper = compute_bounds(X, mask)
    else:
        lower = np.asarray(bounds[0], dtype=float)
        upper = np.asarray(bounds[1], dtype=float)
    col_means = _column_means(X, mask)

    missing = ~mask
    init = np.clip(col_means, lower, upper)
    X[missing] = np.broadcast_to(init, X.shape)[missing]

    prev_obj = None
    M = X
    for _ in range(max_iter):
        M, _ = _truncated_svd(X, r)
        update = np.clip(M, lower, upper)
        X[missing] = update[missing]
        obj = float(np.sum((X - M) ** 2))
        if trace_out is not None:
            trace_out.append(obj)
        if prev_obj is not None:
            if prev_obj <= 0.0 or (prev_obj - obj) / prev_obj < tol:
                break
        prev_obj = obj

    _, basis = _truncated_svd(M, r)
    model = BmcModel(basis=basis, lower=lower, upper=upper, rank=r, col_means=col_means)
    return X, model


def impute_new(
    z: np.ndarray,
    observed_set,
    model: BmcModel,
    tol: float = IMPUTE_TOL,
    max_iter: int = IMPUTE_MAX_ITER,
    trace_out: list | None = None,
) -> np.ndarray:
    """Fill the missing entries of one daily vector by basis projection.

    Missing entries are seeded with the clamped training column means, then
    alpha = basis' z and z_j = clamp((basis alpha)_j) alternate until the
    relative decrease of ||z - basis alpha||^2 falls below tol. Observed
    entries are never modified and every imputed entry lies in its bounds.
    """
    z = np.array(z, dtype=float)
    P = z.size
    observed = np.zeros(P, dtype=bool)
    observed[np.asarray(list(observed_set), dtype=int)] = True
    missing = ~observed
    if not missing.any():
        return z
    if not np.all(np.isfinite(z[observed])):
        raise NumericalError("observed entries contain non-finite values")

    U = model.basis
    z[missing] = np.clip(model.col_means, model.lower, model.upper)[missing]
    prev_obj = None
    for _ in range(max_iter):
        alpha = U.T @ z
        fitted = U @ alpha
        z[missing] = np.clip(fitted, model.lower, model.upper)[missing]
        obj = float(np.sum((z - U @ (U.T @ z)) ** 2))
        if trace_out is not None:
            trace_out.append(obj)
        if prev_obj is not None:
            if prev_obj <= 0.0 or (prev_obj - obj) / prev_obj < tol:
                break
        prev_obj = obj
    return z


def mean_impute(X: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Replace each missing entry with its column's observed mean."""
    X = np.array(X, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    means = _column_means(X, mask)
    missing = ~mask
    X[missing] = np.broadcast_to(means, X.shape)[missing]
    return X


def _row_distances(z, z_mask, X, mask):
    """RMS difference to each row of X over mutually observed columns.

    Rows sharing no observed column get distance +inf (ineligible).
    """
    shared = mask & z_mask
    counts = shared.sum(axis=1)
    diff = np.where(shared, X - z, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        d = np.sqrt((diff**2).sum(axis=1) / counts)
    d[counts == 0] = np.inf
    return d


def _knn_fill_row(z, z_mask, X, mask, k, col_means):
    dist = _row_distances(z, z_mask, X, mask)
    out = z.copy()
    for j in np.flatnonzero(~z_mask):
        candidates = np.flatnonzero(mask[:, j] & np.isfinite(dist))
        if candidates.size == 0:
            out[j] = col_means[j]
            continue
        order = candidates[np.argsort(dist[candidates], kind="stable")]
        nearest = order[:k]
        out[j] = X[nearest, j].mean()
    return out


def knn_impute(X: np.ndarray, mask: np.ndarray, k: int = 5) -> np.ndarray:
    """Impute each missing entry from the k nearest rows that observe it.

    Distance is the root mean squared difference over mutually observed
    columns; rows sharing no observed column with the target are skipped
    and the column mean is used when no eligible neighbor observes the
    entry's column.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    X = np.array(X, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    col_means = _column_means(X, mask)
    out = X.copy()
    others = np.ones(X.shape[0], dtype=bool)
    for i in range(X.shape[0]):
        if mask[i].all():
            continue
        others[i] = False
        out[i] = _knn_fill_row(X[i], mask[i], X[others], mask[others], k, col_means)
        others[i] = True
    return out


def cohort_matrix(cohort) -> ImputationMatrix:
    """Stack every subject-day row of a cohort into one imputation matrix."""
    rows, masks, index = [], [], []
    for s in cohort.subjects:
        for t in range(s.values.shape[0]):
            rows.append(s.values[t])
            masks.append(s.mask[t])
            index.append((s.subject_id, s.first_day + t))
    if not rows:
        raise EmptyColumnError("cohort has no observation rows")
    return ImputationMatrix(X=np.array(rows, dtype=float), mask=np.array(masks, dtype=bool), row_index=index)


def build_imputation_matrix(windows: list[WindowSample]) -> ImputationMatrix:
    """Stack the unique (subject, day) rows of a window set, in input order."""
    rows, masks, index = [], [], []
    seen = set()
    for w in windows:
        T = w.x.shape[0]
        first = w.window_end_day - T + 1
        for t in range(T):
            key = (w.subject_id, first + t)
            if key in seen:
                continue
            seen.add(key)
            rows.append(w.x[t])
            masks.append(w.x_mask[t])
            index.append(key)
    if not rows:
        raise EmptyColumnError("no rows to impute")
    return ImputationMatrix(X=np.array(rows, dtype=float), mask=np.array(masks, dtype=bool), row_index=index)


def fill_windows(windows: list[WindowSample], completed: np.ndarray, row_index) -> list[WindowSample]:
    """Rebuild windows with rows taken from a completed imputation matrix."""
    lookup = {key: i for i, key in enumerate(row_index)}
    out = []
    for w in windows:
        T = w.x.shape[0]
        first = w.window_end_day - T + 1
        x = np.vstack([completed[lookup[(w.subject_id, first + t)]] for t in range(T)])
        out.append(imputed_copy(w, x))
    return out


class BmcImputer:
    """Bounded matrix completion over training rows; basis projection for new rows."""

    name = "bmc"

    def __init__(self, rank: int = 3, tol: float = BMC_TOL, max_iter: int = BMC_MAX_ITER,
                 impute_tol: float = IMPUTE_TOL, impute_max_iter: int = IMPUTE_MAX_ITER):
        self.rank = rank
        self.tol = tol
        self.max_iter = max_iter
        self.impute_tol = impute_tol
        self.impute_max_iter = impute_max_iter
        self.model: BmcModel | None = None
        self.completed: np.ndarray | None = None

    def clone(self) -> "BmcImputer":
        return BmcImputer(self.rank, self.tol, self.max_iter, self.impute_tol, self.impute_max_iter)

    def fit(self, matrix: ImputationMatrix) -> "BmcImputer":
        self.completed, self.model = bmc_fit(matrix.X, matrix.mask, self.rank, self.tol, self.max_iter)
        return self

    def transform_row(self, z: np.ndarray, observed: np.ndarray) -> np.ndarray:
        return impute_new(z, np.flatnonzero(observed), self.model,
                          tol=self.impute_tol, max_iter=self.impute_max_iter)

    def params(self) -> dict:
        return {"rank": self.rank, "tol": self.tol, "max_iter": self.max_iter}


class MeanImputer:
    """Column means of the training rows."""

    name = "mean"

    def __init__(self):
        self.col_means: np.ndarray | None = None
        self.completed: np.ndarray | None = None

    def clone(self) -> "MeanImputer":
        return MeanImputer()

    def fit(self, matrix: ImputationMatrix) -> "MeanImputer":
        self.col_means = _column_means(matrix.X, matrix.mask)
        self.completed = mean_impute(matrix.X, matrix.mask)
        return self

    def transform_row(self, z, observed):
        out = np.array(z, dtype=float)
        out[~observed] = self.col_means[~observed]
        return out

    def params(self) -> dict:
        return {}


class KnnImputer:
    """K nearest training rows on mutually observed columns."""

    name = "knn"

    def __init__(self, k: int = 5):
        self.k = k
        self.train_X: np.ndarray | None = None
        self.train_mask: np.ndarray | None = None
        self.col_means: np.ndarray | None = None
        self.completed: np.ndarray | None = None

    def clone(self) -> "KnnImputer":
        return KnnImputer(self.k)

    def fit(self, matrix: ImputationMatrix) -> "KnnImputer":
        self.train_X = matrix.X.copy()
        self.train_mask = matrix.mask.copy()
        self.col_means = _column_means(matrix.X, matrix.mask)
        self.completed = knn_impute(matrix.X, matrix.mask, self.k)
        return self

    def transform_row(self, z, observed):
        if observed.all():
            return np.array(z, dtype=float)
        return _knn_fill_row(np.asarray(z, dtype=float), observed,
                             self.train_X, self.train_mask, self.k, self.col_means)

    def params(self) -> dict:
        return {"k": self.k}


def make_imputer(name: str, **params):
    if name == "bmc":
        return BmcImputer(**params)
    if name == "mean":
        return MeanImputer(**params)
    if name == "knn":
        return KnnImputer(**params)
    raise ValueError(f"unknown imputer {name!r}")
