import math
from types import SimpleNamespace

import numpy as np
import pytest

from ogclust import em, select
from ogclust.core import OmicsDataset, PenaltySpec
from ogclust.errors import ValidationError
from ogclust.simbench import fold_ids, rmse_r2

from conftest import small_mixture

QUICK = em.FitControls(n_restarts=2, max_em_iters=200)


def test_bic_hand_formula():
    assert select.bic(SimpleNamespace(df=5, loglik=-200.0), 100) == pytest.approx(423.0259, abs=5e-5)
    assert select.bic(SimpleNamespace(df=5, loglik=-200.0), 100) == 5 * math.log(100) + 400


def test_bic_prefers_fewer_parameters_at_equal_fit():
    a = select.PathEntry(2, 1.0, SimpleNamespace(), select.bic(SimpleNamespace(df=10, loglik=-50.0), 80))
    b = select.PathEntry(2, 0.5, SimpleNamespace(), select.bic(SimpleNamespace(df=12, loglik=-50.0), 80))
    assert select._select_winner([b, a]) == 1


def test_df_counts_intercepts(toy):
    data, _ = toy
    r = em.fit(data, 2, PenaltySpec("lasso", 1e6), controls=QUICK)
    assert r.df >= 2
    assert math.isfinite(r.bic)


def test_single_grid_point_equals_direct_fit(toy):
    data, _ = toy
    path = select.fit_path(data, [2], [0.7], "lasso", controls=QUICK)
    direct = em.fit(data, 2, PenaltySpec("lasso", 0.7), controls=QUICK)
    assert len(path.entries) == 1 and path.winner == 0
    assert path.best.fit.objective == pytest.approx(direct.objective, rel=1e-12)
    assert np.array_equal(path.best.fit.theta.gamma, direct.theta.gamma)


def test_path_lambdas_decrease_and_df_grows():
    data, _ = small_mixture(n=120, q=12, seed=4)
    path = select.fit_path(data, [2, 3], None, "group", controls=QUICK, n_lambda=8, min_ratio=0.001)
    for K in (2, 3):
        lams = [e.lam for e in path.slice(K)]
        assert np.all(np.diff(lams) < 0)
        g = path.grids[K]
        assert np.all(np.diff(g) < 0)
    dfs = [e.fit.df for e in path.slice(2)]
    assert dfs[0] <= dfs[-1]
    assert path.best.bic == min(e.bic for e in path.entries)


def test_lambda_grid_top_is_full_shrinkage(toy):
    data, _ = toy
    grid = select.default_lambda_grid(data, 2, "lasso", controls=QUICK, n_lambda=5)
    assert len(grid) == 5 and np.all(np.diff(grid) < 0)
    r = em.fit(data, 2, PenaltySpec("lasso", grid[0] * 1.01), controls=em.FitControls(n_restarts=1,
                                                                                         max_em_iters=1))
    assert r.selected_features == []


def test_empty_grids_rejected(toy):
    data, _ = toy
    with pytest.raises(ValidationError):
        select.fit_path(data, [], [1.0])
    with pytest.raises(ValidationError):
        select.fit_path(data, [2], [])


def test_rmse_r2_identities():
    y = np.array([1.0, 2.0, 4.0, 8.0])
    assert rmse_r2(y, y) == (0.0, 1.0)
    assert rmse_r2(y, np.full(4, y.mean()))[1] == pytest.approx(0.0, abs=1e-15)


def test_cv_single_cluster_is_linear_regression():
    rng = np.random.default_rng(8)
    n = 80
    X = rng.normal(size=(n, 2))
    y = 1.0 + X @ [0.5, -1.0] + rng.normal(size=n)
    data = OmicsDataset.continuous(y, rng.normal(size=(n, 3)), X)
    rep = select.kfold_cv(data, 1, PenaltySpec("lasso", 0.0), controls=QUICK, folds=5, seed=2)
    fid = fold_ids(n, 5, 2)
    yhat = np.empty(n)
    A = np.column_stack([np.ones(n), X])
    for f in range(5):
        tr = fid != f
        coef, *_ = np.linalg.lstsq(A[tr], y[tr], rcond=None)
        yhat[~tr] = A[~tr] @ coef
    assert rep.r2 == pytest.approx(rmse_r2(y, yhat)[1], abs=1e-6)
    assert np.allclose(rep.yhat, yhat, atol=1e-6)


def test_cv_constant_outcome_has_no_skill():
    rng = np.random.default_rng(1)
    data = OmicsDataset.continuous(np.full(40, 3.0) + 1e-3 * rng.normal(size=40), rng.normal(size=(40, 3)))
    for K in (1, 2):
        rep = select.kfold_cv(data, K, PenaltySpec("lasso", 5.0), controls=QUICK, folds=4)
        assert rep.r2 <= 0.2


def test_folds_partition():
    fid = fold_ids(23, 5, 0)
    assert set(fid) == set(range(5))
    assert np.bincount(fid).max() - np.bincount(fid).min() <= 1
    assert np.array_equal(fid, fold_ids(23, 5, 0))


def test_cv_labels_and_r2_bound(toy):
    data, _ = toy
    rep = select.kfold_cv(data, 2, PenaltySpec("lasso", 1.0), controls=QUICK, folds=5)
    assert rep.r2 <= 1.0
    assert set(np.unique(rep.labels)) <= {0, 1}
    assert rep.r2 > 0.5


def test_elbow_rows(toy):
    data, _ = toy
    rows = select.elbow_diagnostics(data, [3, 1, 2], PenaltySpec("lasso", 1.0), controls=QUICK, folds=4)
    assert [r["K"] for r in rows] == [1, 2, 3]
    assert rows[1]["r2"] > rows[0]["r2"]


def test_refine_to_size_hits_target():
    data, _ = small_mixture(n=150, q=20, seed=6)
    path = select.fit_path(data, [2], None, "lasso", controls=QUICK, n_lambda=4, min_ratio=0.05)
    e = select.refine_to_size(data, path, 2, 3, "lasso", controls=QUICK)
    sizes = [len(x.fit.selected_features) for x in path.slice(2)]
    assert abs(len(e.fit.selected_features) - 3) <= min(abs(s - 3) for s in sizes)
