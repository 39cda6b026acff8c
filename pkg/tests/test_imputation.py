import numpy as np
import pytest

from cenrank.errors import EmptyColumnError
from cenrank.imputation import (
    BmcModel,
    bmc_fit,
    build_imputation_matrix,
    compute_bounds,
    fill_windows,
    impute_new,
    knn_impute,
    mean_impute,
)
from cenrank.modelio import load_bmc_model, save_bmc_model
from cenrank.synthetic import generate_lowrank_matrix


def bmc_oracle(X, mask, r, n_iter=200):
    """Straight transcription of the alternating completion loop, kept
    independent of the library implementation."""
    lower = np.nanmin(np.where(mask, X, np.nan), axis=0)
    upper = np.nanmax(np.where(mask, X, np.nan), axis=0)
    means = np.nanmean(np.where(mask, X, np.nan), axis=0)
    Xw = X.copy()
    Xw[~mask] = np.broadcast_to(means, X.shape)[~mask]
    for _ in range(n_iter):
        U, s, Vt = np.linalg.svd(Xw, full_matrices=False)
        M = (U[:, :r] * s[:r]) @ Vt[:r]
        Xw[~mask] = np.minimum(upper, np.maximum(lower, M))[~mask]
    return Xw, M


class TestBounds:
    def test_min_max(self):
        X = np.array([[2.0, 1.0], [4.0, np.nan]])
        mask = ~np.isnan(X)
        lower, upper = compute_bounds(X, mask)
        assert lower.tolist() == [2.0, 1.0]
        assert upper.tolist() == [4.0, 1.0]

    def test_single_observation_column(self):
        X = np.array([[3.0], [np.nan]])
        lower, upper = compute_bounds(X, ~np.isnan(X))
        assert lower[0] == upper[0] == 3.0

    def test_empty_column(self):
        X = np.array([[np.nan, 1.0], [np.nan, 2.0]])
        with pytest.raises(EmptyColumnError):
            compute_bounds(X, ~np.isnan(X))


class TestBmcFit:
    def test_no_missing_returns_input(self):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((8, 4))
        done, model = bmc_fit(X, np.ones_like(X, dtype=bool), r=2)
        assert np.array_equal(done, X)
        assert model.basis.shape == (4, 2)

    def test_clamped_fixed_point(self):
        # rank-1 completion of [[1,2],[2,4],[3,.]] wants 6 (exact rank-1
        # pattern) but the observed column-2 max is 4, so the bound binds
        X = np.array([[1.0, 2.0], [2.0, 4.0], [3.0, np.nan]])
        mask = ~np.isnan(X)
        done, model = bmc_fit(X, mask, r=1)
        assert done[2, 1] == 4.0
        oracle_X, _ = bmc_oracle(X, mask, r=1)
        assert oracle_X[2, 1] == 4.0
        # the unconstrained rank-1 value at the fixed point exceeds the bound
        U, s, Vt = np.linalg.svd(oracle_X, full_matrices=False)
        M1 = (U[:, :1] * s[:1]) @ Vt[:1]
        assert M1[2, 1] >= 4.0

    def test_matches_oracle_on_random_instance(self):
        rng = np.random.default_rng(4)
        X = generate_lowrank_matrix(12, 6, 2, seed=4) + 0.05 * rng.standard_normal((12, 6))
        mask = rng.random((12, 6)) >= 0.25
        X_in = np.where(mask, X, np.nan)
        done, _ = bmc_fit(X_in, mask, r=2, tol=1e-14, max_iter=400)
        oracle_X, _ = bmc_oracle(X_in, mask, r=2, n_iter=400)
        assert np.allclose(done, oracle_X, atol=1e-8)

    def test_exact_rank2_recovery(self):
        M = generate_lowrank_matrix(60, 12, 2, seed=11)
        rng = np.random.default_rng(11)
        mask = rng.random((60, 12)) >= 0.2
        wide = (np.full(12, -1e9), np.full(12, 1e9))
        done, _ = bmc_fit(np.where(mask, M, np.nan), mask, r=2, tol=1e-12, max_iter=3000, bounds=wide)
        hidden = ~mask
        rel = np.linalg.norm((done - M)[hidden]) / np.linalg.norm(M[hidden])
        assert rel <= 1e-3

    def test_observed_untouched_and_bounds_respected(self):
        rng = np.random.default_rng(7)
        for seed in range(5):
            rng = np.random.default_rng(seed)
            X = rng.standard_normal((15, 5)) * 3
            mask = rng.random((15, 5)) >= 0.3
            mask[0] = True  # keep every column observed at least once
            X_in = np.where(mask, X, np.nan)
            trace = []
            done, model = bmc_fit(X_in, mask, r=2, trace_out=trace)
            assert np.array_equal(done[mask], X[mask])
            missing = ~mask
            assert np.all(done[missing] >= np.broadcast_to(model.lower, X.shape)[missing])
            assert np.all(done[missing] <= np.broadcast_to(model.upper, X.shape)[missing])
            assert all(b <= a + 1e-12 for a, b in zip(trace, trace[1:]))

    def test_basis_is_orthonormal(self):
        rng = np.random.default_rng(2)
        X = rng.standard_normal((20, 6))
        mask = rng.random((20, 6)) >= 0.2
        mask[0] = True
        _, model = bmc_fit(np.where(mask, X, np.nan), mask, r=3)
        assert np.allclose(model.basis.T @ model.basis, np.eye(3), atol=1e-8)

    def test_empty_column_raises(self):
        X = np.array([[1.0, np.nan], [2.0, np.nan]])
        with pytest.raises(EmptyColumnError):
            bmc_fit(X, ~np.isnan(X), r=1)


class TestImputeNew:
    def _model(self, upper2=10.0):
        return BmcModel(
            basis=np.array([[0.6], [0.8]]),
            lower=np.array([0.0, 0.0]),
            upper=np.array([10.0, upper2]),
            rank=1,
            col_means=np.array([0.0, 0.0]),
        )

    def test_fully_observed_unchanged(self):
        z = np.array([3.0, 5.0])
        out = impute_new(z, [0, 1], self._model())
        assert np.array_equal(out, z)

    def test_scalar_fixed_point(self):
        # z2 = 0.8 * (0.6*3 + 0.8*z2) has the unique fixed point 4.0
        out = impute_new(np.array([3.0, np.nan]), [0], self._model())
        assert abs(out[1] - 4.0) < 1e-6
        assert out[0] == 3.0

    def test_clamped_at_upper_bound(self):
        out = impute_new(np.array([3.0, np.nan]), [0], self._model(upper2=2.0))
        assert out[1] == 2.0

    def test_objective_non_increasing(self):
        rng = np.random.default_rng(5)
        basis, _ = np.linalg.qr(rng.standard_normal((8, 3)))
        model = BmcModel(basis=basis, lower=np.full(8, -9.0), upper=np.full(8, 9.0),
                         rank=3, col_means=np.zeros(8))
        for seed in range(5):
            rng = np.random.default_rng(seed)
            z = rng.standard_normal(8) * 2
            observed = rng.random(8) >= 0.5
            trace = []
            out = impute_new(np.where(observed, z, np.nan), np.flatnonzero(observed), model, trace_out=trace)
            assert all(b <= a + 1e-12 for a, b in zip(trace, trace[1:]))
            assert np.all(out >= model.lower - 1e-12) and np.all(out <= model.upper + 1e-12)
            assert np.array_equal(out[observed], z[observed])

    def test_all_missing_fills_from_means(self):
        model = self._model()
        model = BmcModel(basis=model.basis, lower=model.lower, upper=model.upper,
                         rank=1, col_means=np.array([1.0, 2.0]))
        out = impute_new(np.array([np.nan, np.nan]), [], model)
        assert np.all(np.isfinite(out))


class TestMeanImpute:
    def test_column_mean(self):
        X = np.array([[2.0, 1.0], [4.0, 2.0], [np.nan, 3.0]])
        out = mean_impute(X, ~np.isnan(X))
        assert out[2, 0] == 3.0

    def test_no_missing_unchanged(self):
        X = np.array([[1.0, 2.0]])
        assert np.array_equal(mean_impute(X, np.ones_like(X, bool)), X)

    def test_single_observation_columns(self):
        X = np.array([[5.0, np.nan], [np.nan, 7.0]])
        out = mean_impute(X, ~np.isnan(X))
        assert out[1, 0] == 5.0 and out[0, 1] == 7.0


class TestKnnImpute:
    def test_nearest_row_wins(self):
        X = np.array([[1.0, 2.0], [1.0, np.nan], [5.0, 6.0]])
        out = knn_impute(X, ~np.isnan(X), k=1)
        assert out[1, 1] == 2.0

    def test_large_k_averages_eligible_rows(self):
        X = np.array([[1.0, 2.0], [1.0, np.nan], [5.0, 6.0], [2.0, 4.0]])
        out = knn_impute(X, ~np.isnan(X), k=10)
        assert out[1, 1] == pytest.approx((2.0 + 6.0 + 4.0) / 3)

    def test_isolated_row_falls_back_to_column_mean(self):
        X = np.array([[1.0, np.nan], [np.nan, 6.0], [np.nan, 2.0]])
        out = knn_impute(X, ~np.isnan(X), k=2)
        assert out[0, 1] == 4.0  # no row shares an observed column with row 0

    def test_exhaustive_distance_oracle(self):
        rng = np.random.default_rng(8)
        X = rng.standard_normal((9, 4)) * 2
        mask = rng.random((9, 4)) >= 0.3
        mask[0] = True
        X_in = np.where(mask, X, np.nan)
        out = knn_impute(X_in, mask, k=3)
        col_means = np.nanmean(np.where(mask, X, np.nan), axis=0)
        for i in range(9):
            for j in range(4):
                if mask[i, j]:
                    assert out[i, j] == X[i, j]
                    continue
                dists = {}
                for other in range(9):
                    if other == i:
                        continue
                    shared = mask[i] & mask[other]
                    if not shared.any():
                        continue
                    dists[other] = np.sqrt(np.mean((X[i, shared] - X[other, shared]) ** 2))
                eligible = [o for o in sorted(dists, key=lambda o: (dists[o], o)) if mask[o, j]]
                if eligible:
                    expect = np.mean([X[o, j] for o in eligible[:3]])
                else:
                    expect = col_means[j]
                assert out[i, j] == pytest.approx(expect, abs=1e-12)


class TestWindowMatrixPlumbing:
    def test_unique_rows_and_refill(self):
        from cenrank.cohort import extract_windows
        from helpers import tiny_cohort

        windows = extract_windows(tiny_cohort(), T=3)
        matrix = build_imputation_matrix(windows)
        assert len(matrix.row_index) == len(set(matrix.row_index))
        days = {(sid, day) for sid, day in matrix.row_index}
        assert ("A", 1) in days and ("B", 6) in days
        completed = np.nan_to_num(matrix.X, nan=-1.0)
        filled = fill_windows(windows, completed, matrix.row_index)
        assert all(w.x_mask.all() for w in filled)
        # row content propagated back into the right window slots
        first = filled[0]
        assert np.array_equal(first.x[0], completed[matrix.row_index.index((first.subject_id, first.window_end_day - 2))])


class TestBmcPersistence:
    def test_roundtrip_exact(self, tmp_path):
        rng = np.random.default_rng(13)
        X = rng.standard_normal((30, 5))
        mask = rng.random((30, 5)) >= 0.2
        mask[0] = True
        _, model = bmc_fit(np.where(mask, X, np.nan), mask, r=2)
        path = tmp_path / "bmc.json"
        save_bmc_model(path, model, [f"v{i}" for i in range(5)])
        loaded = load_bmc_model(path)
        assert np.array_equal(loaded.basis, model.basis)
        assert np.array_equal(loaded.lower, model.lower)
        assert np.array_equal(loaded.upper, model.upper)
        assert np.array_equal(loaded.col_means, model.col_means)
        assert loaded.rank == model.rank
