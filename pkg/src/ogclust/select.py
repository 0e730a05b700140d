"""Model selection: BIC, warm-started lambda paths, cross-validation, elbow tables."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import em, gating
from .core import LossSpec, OmicsDataset, PenaltySpec, check_dataset, mixing_probs
from .em import FitControls, FitResult
from .errors import FitFailure, OgClustError, ValidationError
from .simbench import fold_ids, rmse_r2

log = logging.getLogger(__name__)


def bic(fit: FitResult, n: int) -> float:
    """ln(n) * df - 2 * log-likelihood at the estimate (unpenalised)."""
    return math.log(n) * fit.df - 2.0 * fit.loglik


@dataclass
class PathEntry:
    K: int
    lam: float
    fit: Optional[FitResult]
    bic: float
    parent: Optional[int] = None  # index of the warm-start source entry
    error: Optional[str] = None


@dataclass
class PathResult:
    entries: list
    grids: dict
    winner: int

    @property
    def best(self) -> PathEntry:
        return self.entries[self.winner]

    def slice(self, K):
        return [e for e in self.entries if e.K == K]


def default_lambda_grid(data: OmicsDataset, K, kind="group", loss=LossSpec(), controls=FitControls(),
                        n_lambda=30, min_ratio=0.01, max_ratio=1.0):
    """Log-spaced grid from max_ratio * lambda_max down to min_ratio * lambda_max.

    lambda_max is the smallest lambda at which every gating coefficient is zero.

    lambda_max comes from the quadratic approximation at the restart-0
    initialisation with gamma = 0.
    """
    if K < 2:
        return np.array([0.0])
    ws = em._Workspace(data, controls)
    th0 = em.initial_theta(data, K, loss, PenaltySpec(kind, 0.0), ws.G.shape[1], controls.rng_seed, 0)
    W = em.e_step_from_joint(em._joint(th0, data, ws.G))[0]
    qa = gating.build_quad_approx(W, mixing_probs(th0.gamma, ws.G), th0.gamma, ws.G)
    lmax = gating.lambda_max(qa, ws.G, kind, ws.pf)
    if lmax <= 0:
        return np.array([0.0])
    return np.exp(np.linspace(math.log(max_ratio * lmax), math.log(min_ratio * lmax), n_lambda))


def _select_winner(entries):
    ok = [i for i, e in enumerate(entries) if e.fit is not None]
    if not ok:
        return None
    # smallest BIC; ties -> larger lambda, then smaller K
    return min(ok, key=lambda i: (entries[i].bic, -entries[i].lam, entries[i].K))


def fit_path(data: OmicsDataset, K_grid: Sequence[int], lambda_grid=None, penalty_kind="group",
             loss: LossSpec = LossSpec(), controls: FitControls = FitControls(), alpha=0.5,
             n_lambda=30, min_ratio=0.01, cold_restarts=True, max_ratio=1.0,
             bic_patience=None, max_selected=None) -> PathResult:
    """Fit every (K, lambda) cell, lambdas in decreasing order with warm starts.

    Each lambda after the first starts from the previous solution; with
    ``cold_restarts`` the usual restarts are tried as well and the best
    objective kept. BIC picks the winner. With ``bic_patience`` a K-slice
    stops once that many consecutive fits fail to improve its best BIC; with
    ``max_selected`` it stops after a fit selecting more features than that.
    """
    check_dataset(data)
    if not len(K_grid):
        raise ValidationError("empty K grid")
    entries = []
    grids = {}
    for K in K_grid:
        if lambda_grid is None:
            grid = default_lambda_grid(data, K, penalty_kind, loss, controls, n_lambda, min_ratio,
                                       max_ratio)
        else:
            grid = np.asarray(lambda_grid, dtype=float)
        grid = np.unique(grid)[::-1] if K > 1 else np.array([float(np.max(grid))])
        if len(grid) == 0:
            raise ValidationError("empty lambda grid")
        grids[K] = grid
        prev = None
        prev_idx = None
        best_bic, stale = math.inf, 0
        for lam in grid:
            if bic_patience is not None and stale >= bic_patience:
                break
            pen = PenaltySpec(penalty_kind, float(lam), alpha)
            try:
                f = em.fit(data, K, pen, loss, controls, init=prev,
                           cold_restarts=cold_restarts or prev is None)
            except OgClustError as exc:
                log.warning("fit failed at K=%d lambda=%.4g: %s", K, lam, exc)
                entries.append(PathEntry(K, float(lam), None, math.inf, prev_idx, str(exc)))
                continue
            b = bic(f, data.n)
            entries.append(PathEntry(K, float(lam), f, b, prev_idx))
            prev, prev_idx = f, len(entries) - 1
            if b < best_bic:
                best_bic, stale = b, 0
            else:
                stale += 1
            if max_selected is not None and len(f.selected_features) > max_selected:
                break
    winner = _select_winner(entries)
    if winner is None:
        raise FitFailure("every fit along the path failed", [e.error for e in entries])
    return PathResult(entries=entries, grids=grids, winner=winner)


def refine_to_size(data: OmicsDataset, path: PathResult, K, target, penalty_kind="group",
                   loss: LossSpec = LossSpec(), controls: FitControls = FitControls(), alpha=0.5,
                   steps=4, widen=4) -> PathEntry:
    """Path entry whose number of selected features is closest to ``target``.

    If every fit in the K-slice lies on one side of ``target`` the lambda
    range is widened by factors of 4 (up to ``widen`` times). When the slice
    then jumps over ``target`` between two neighbouring lambdas, the gap is
    bisected on the log scale up to ``steps`` times, each fit warm-started
    from the sparser neighbour. Ties go to the larger lambda.
    """
    cells = sorted([e for e in path.slice(K) if e.fit is not None], key=lambda e: -e.lam)
    if not cells:
        raise FitFailure(f"no successful fit for K={K}")

    def size(e):
        return len(e.fit.selected_features)

    def key(e):
        return (abs(size(e) - target), -e.lam)

    def run(lam, init):
        try:
            f = em.fit(data, K, PenaltySpec(penalty_kind, lam, alpha), loss, controls, init=init,
                       cold_restarts=init is None)
        except OgClustError as exc:
            log.warning("refinement fit failed at lambda=%.4g: %s", lam, exc)
            return None
        return PathEntry(K, lam, f, bic(f, data.n))

    for _ in range(widen):
        if size(cells[0]) > target:
            e = run(cells[0].lam * 4.0, None)
            if e is None:
                break
            cells.insert(0, e)
        elif size(cells[-1]) < target:
            e = run(cells[-1].lam / 4.0, cells[-1].fit)
            if e is None:
                break
            cells.append(e)
        else:
            break
    best = min(cells, key=key)
    hi = lo = None
    for a, b in zip(cells, cells[1:]):
        if size(a) < target < size(b):
            hi, lo = a, b
            break
    for _ in range(steps if hi is not None else 0):
        e = run(math.sqrt(hi.lam * lo.lam), hi.fit)
        if e is None:
            break
        if key(e) < key(best):
            best = e
        if size(e) == target:
            break
        if size(e) < target:
            hi = e
        else:
            lo = e
    return best


@dataclass
class CvReport:
    folds: np.ndarray
    fold_rmse: list
    fold_r2: list
    rmse: float
    r2: float
    yhat: np.ndarray
    labels: np.ndarray  # posterior labels in ascending-intercept order
    gating_labels: np.ndarray
    selected: list
    failed_folds: list = field(default_factory=list)


def kfold_cv(data: OmicsDataset, K, penalty: PenaltySpec, loss: LossSpec = LossSpec(),
             controls: FitControls = FitControls(), folds=10, seed=0, init=None) -> CvReport:
    """Fit on each training split, predict the held-out split.

    Held-out outcomes are predicted with the gating mixture mean. Held-out
    labels come from the posterior weights (which see the held-out outcome)
    and are mapped to ascending-intercept order so they agree across folds.
    RMSE and R^2 are pooled over all held-out predictions.
    """
    check_dataset(data)
    fid = fold_ids(data.n, folds, seed)
    yhat = np.full(data.n, np.nan)
    labels = np.full(data.n, -1)
    glabels = np.full(data.n, -1)
    fr, f2, sel, failed = [], [], [], []
    y = data.response
    for f in range(folds):
        test = np.nonzero(fid == f)[0]
        train = np.nonzero(fid != f)[0]
        try:
            res = em.fit(data.subset(train), K, penalty, loss, controls, init=init,
                         cold_restarts=init is None)
        except OgClustError as exc:
            log.warning("fold %d failed: %s", f, exc)
            failed.append(f)
            fr.append(math.nan)
            f2.append(math.nan)
            sel.append([])
            continue
        th = res.theta
        _, zg, yh = em.predict(th, data.G[test], data.X[test], hard=controls.hard_predict)
        rank = em.display_rank(th)
        zp = em.posterior_labels(th, data.subset(test))
        yhat[test] = yh
        labels[test] = rank[zp]
        glabels[test] = rank[zg]
        a, b = rmse_r2(y[test], yh)
        fr.append(a)
        f2.append(b)
        sel.append(res.selected_features)
    done = ~np.isnan(yhat)
    if not done.any():
        raise FitFailure("every fold failed")
    if failed:
        warnings.warn(f"{len(failed)} fold(s) failed; pooled metrics use the rest", RuntimeWarning)
    rmse, r2 = rmse_r2(y[done], yhat[done])
    return CvReport(folds=fid, fold_rmse=fr, fold_r2=f2, rmse=rmse, r2=r2, yhat=yhat, labels=labels,
                    gating_labels=glabels, selected=sel, failed_folds=failed)


def elbow_diagnostics(data: OmicsDataset, K_grid: Sequence[int], penalty: PenaltySpec,
                      loss: LossSpec = LossSpec(), controls: FitControls = FitControls(), folds=10,
                      seed=0):
    """Cross-validated RMSE and R^2 per K, for plotting; no K is picked automatically."""
    rows = []
    for K in sorted(K_grid):
        try:
            rep = kfold_cv(data, K, penalty, loss, controls, folds, seed)
            rows.append({"K": K, "rmse": rep.rmse, "r2": rep.r2, "status": "ok"})
        except OgClustError as exc:
            rows.append({"K": K, "rmse": math.nan, "r2": math.nan, "status": f"failed: {exc}"})
    return rows
