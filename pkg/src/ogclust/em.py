"""EM fitting of the outcome-guided mixture with embedded feature selection."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from . import gating, robust, survival
from .core import (SIGMA_FLOOR, LossSpec, OmicsDataset, PenaltySpec, ThetaState, check_dataset,
                   component_logdens, e_step_from_joint, linear_predictor, mixing_probs,
                   penalty_value)
from .errors import (EmptyClusterError, FitFailure, NonConvergenceError, OgClustError,
                     ValidationError)

log = logging.getLogger(__name__)

EMPTY_CLUSTER_WEIGHT = 1e-10


@dataclass(frozen=True)
class FitControls:
    max_em_iters: int = 500
    em_tol: float = 1e-7
    n_restarts: int = 5
    rng_seed: int = 0
    monotonicity_tol: float = 1e-6
    cd_tol: float = 1e-7
    cd_max_sweeps: int = 1000
    standardize: bool = True
    gate_intercept: bool = False
    hard_predict: bool = False
    max_halvings: int = 10

    def __post_init__(self):
        if not (self.em_tol > 0 and self.monotonicity_tol > 0 and self.cd_tol > 0):
            raise ValidationError("tolerances must be positive")
        if self.n_restarts < 1:
            raise ValidationError("need at least one restart")
        if self.max_em_iters < 1:
            raise ValidationError("max_em_iters must be >= 1")


@dataclass
class FitResult:
    """Outcome of :func:`fit`.

    ``theta`` is on the original feature scale. ``objective`` and
    ``objective_trace`` are the penalised objective on the fitting scale
    (standardised features when ``controls.standardize``), which is what EM
    ascends.
    """

    theta: ThetaState
    weights: np.ndarray
    objective_trace: list
    converged: bool
    iterations: int
    selected_features: list
    df: int
    restart_index: int
    loglik: float
    objective: float
    n: int
    K: int
    lam: float
    sigma_floor_hit: bool = False
    diagnostics: list = field(default_factory=list)
    feature_scale: Optional[np.ndarray] = None
    controls: Optional[FitControls] = None

    @property
    def bic(self):
        from .select import bic

        return bic(self, self.n)


# ---------------------------------------------------------------------------
# E and M steps


def e_step(theta: ThetaState, data: OmicsDataset):
    """Posterior weights w_ik computed in log space; rows sum to one."""
    W, _ = e_step_from_joint(_joint(theta, data, data.G))
    return W


def _joint(theta, data, G):
    eta = _eta(theta.gamma, G, theta.gate_intercept)
    logpi = eta - logsumexp(eta, axis=1, keepdims=True)
    return logpi + component_logdens(theta, data)


def _eta(gamma, G, intercept=None):
    rows = np.nonzero(np.any(gamma != 0, axis=1))[0]
    if len(rows) == 0:
        eta = np.zeros((G.shape[0], gamma.shape[1]))
    elif len(rows) == gamma.shape[0]:
        eta = G @ gamma
    else:
        eta = G[:, rows] @ gamma[rows]
    if intercept is not None:
        eta = eta + intercept
    return eta


def m_step_gaussian(W, data: OmicsDataset, theta_prev: ThetaState):
    """Closed-form updates for (beta0, beta, sigma).

    Intercepts use the previous slopes; each slope is then updated once in
    turn with the others at their current values; sigma uses the new
    residuals and is floored at ``SIGMA_FLOOR``.
    """
    W = np.asarray(W, dtype=float)
    tot = W.sum(axis=0)
    if np.any(tot < EMPTY_CLUSTER_WEIGHT):
        k = int(np.argmin(tot))
        raise EmptyClusterError(f"cluster {k + 1} has total responsibility {tot[k]:.3g}", k + 1)
    inlier = np.ones(W.shape, dtype=bool)
    b0, b, s, _ = robust.truncated_update(W, data.response, data.X, theta_prev.beta0,
                                          theta_prev.beta, inlier)
    return b0, b, s


def outcome_step(W, data, theta: ThetaState) -> ThetaState:
    """Loss-specific M-step for the outcome parameters."""
    kind = theta.loss.kind
    tot = np.asarray(W).sum(axis=0)
    if np.any(tot < EMPTY_CLUSTER_WEIGHT):
        k = int(np.argmin(tot))
        raise EmptyClusterError(f"cluster {k + 1} has total responsibility {tot[k]:.3g}", k + 1)
    if kind == "gaussian":
        b0, b, s = m_step_gaussian(W, data, theta)
        return theta.replace(beta0=b0, beta=b, sigma=s)
    if kind == "median":
        b0, b, s = robust.mstep_median_truncated(W, data, theta)
        return theta.replace(beta0=b0, beta=b, sigma=s)
    if kind == "huber":
        b0, b, s = robust.mstep_huber_fixed(W, data, theta, theta.loss.tau)
        return theta.replace(beta0=b0, beta=b, sigma=s, tau=np.array([theta.loss.tau]))
    if kind == "adhuber":
        b0, b, s, tau = robust.mstep_huber_adaptive(W, data, theta, theta.loss.z)
        return theta.replace(beta0=b0, beta=b, sigma=s, tau=np.array([tau]))
    if kind == "aft":
        res = survival.aft_mstep(W, data, theta)
        return theta.replace(beta0=res.beta0, beta=res.beta, sigma=res.sigma)
    raise ValidationError(f"unknown loss {kind!r}")


# ---------------------------------------------------------------------------
# fitting workspace


class _Workspace:
    """Fitting-scale view of the data: scaled features, optional intercept column."""

    def __init__(self, data: OmicsDataset, controls: FitControls):
        G = np.asarray(data.G, dtype=float)
        if controls.standardize:
            scale = G.std(axis=0)
            scale[~(scale > 0)] = 1.0
        else:
            scale = np.ones(G.shape[1])
        Gs = G / scale
        self.intercept = controls.gate_intercept
        if self.intercept:
            Gs = np.hstack([np.ones((G.shape[0], 1)), Gs])
            pf = np.r_[0.0, np.ones(G.shape[1])]
        else:
            pf = np.ones(G.shape[1])
        self.G = np.asfortranarray(Gs)
        self.pf = pf
        self.scale = scale
        self.data = data

    def to_internal(self, theta: ThetaState) -> ThetaState:
        g = theta.gamma * self.scale[:, None]
        if self.intercept:
            gi = np.zeros(theta.K) if theta.gate_intercept is None else theta.gate_intercept
            g = np.vstack([gi[None, :], g])
        return theta.replace(gamma=g, gate_intercept=None)

    def to_original(self, theta: ThetaState) -> ThetaState:
        g = theta.gamma
        gi = None
        if self.intercept:
            gi = g[0].copy()
            g = g[1:]
        return theta.replace(gamma=g / self.scale[:, None], gate_intercept=gi)

    def objective(self, theta: ThetaState):
        joint = _joint(theta, self.data, self.G)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            ll = logsumexp(joint, axis=1)
        if not np.all(np.isfinite(ll)):
            i = int(np.nonzero(~np.isfinite(ll))[0][0])
            from .errors import NumericalError

            raise NumericalError(f"non-finite likelihood at sample {i + 1}", sample=i + 1)
        total = float(ll.sum())
        if theta.penalty.lam:
            total -= theta.penalty.lam * penalty_value(theta.gamma, theta.penalty, self.pf > 0)
        return total, joint, ll

    def loglik(self, theta):
        joint = _joint(theta, self.data, self.G)
        return float(logsumexp(joint, axis=1).sum())


def initial_theta(data: OmicsDataset, K, loss: LossSpec, penalty: PenaltySpec, q_internal,
                  seed=0, restart=0) -> ThetaState:
    """Quantile-based start: intercepts at K quantiles of the covariate-adjusted outcome.

    Restarts other than 0 jitter the intercepts by N(0, 0.25 s^2), s being
    the residual scale of the covariate regression.
    """
    r = data.response
    X = np.asarray(data.X, dtype=float)
    A = np.hstack([np.ones((len(r), 1)), X])
    coef, *_ = np.linalg.lstsq(A, r, rcond=None)
    beta = coef[1:]
    u = r - (X @ beta if X.shape[1] else 0.0)
    s_ols = float(np.std(u - coef[0]))
    beta0 = np.quantile(u, (np.arange(K) + 0.5) / K)
    if restart > 0:
        rng = np.random.default_rng([int(seed), int(restart)])
        beta0 = beta0 + rng.normal(0.0, 0.5 * max(s_ols, SIGMA_FLOOR), size=K)
    resid = np.min(np.abs(u[:, None] - beta0[None, :]), axis=1)
    sigma = float(np.sqrt(np.mean(resid ** 2)))
    if loss.kind == "aft":
        sigma *= math.sqrt(3.0) / math.pi
    sigma = max(sigma, 10 * SIGMA_FLOOR)
    return ThetaState(beta0=beta0, beta=beta, gamma=np.zeros((q_internal, K)), sigma=sigma,
                      loss=loss, penalty=penalty)


def _theta_change(a: ThetaState, b: ThetaState):
    c = max(np.abs(a.beta0 - b.beta0).max(), abs(a.sigma - b.sigma))
    if len(a.beta):
        c = max(c, np.abs(a.beta - b.beta).max())
    if a.gamma.size:
        c = max(c, np.abs(a.gamma - b.gamma).max())
    return float(c)


@dataclass
class _Run:
    theta: ThetaState
    trace: list
    converged: bool
    iterations: int
    objective: float
    floor_hit: bool
    halvings: int = 0
    rejected_steps: int = 0


def run_em(ws: _Workspace, theta: ThetaState, controls: FitControls) -> _Run:
    """EM iterations from ``theta`` (fitting scale) until the max-norm change drops below em_tol."""
    G = ws.G
    K = theta.K
    obj, joint, _ = ws.objective(theta)
    trace = [obj]
    floor_hit = False
    halvings = rejected = 0
    converged = False
    m = 0
    for m in range(1, controls.max_em_iters + 1):
        W, _ = e_step_from_joint(joint)
        mid = outcome_step(W, ws.data, theta)
        floor_hit = floor_hit or mid.sigma <= SIGMA_FLOOR
        if K > 1:
            obj_mid, _, _ = ws.objective(mid)
            Pi = mixing_probs(mid.gamma, G)
            qa = gating.build_quad_approx(W, Pi, mid.gamma, G)
            try:
                g_new = gating.update_gamma(qa, mid.gamma, G, mid.penalty, ws.pf, controls.cd_tol,
                                            controls.cd_max_sweeps)
            except NonConvergenceError as exc:
                log.warning("gating update hit the sweep cap; using last iterate")
                g_new = exc.last
            new = mid.replace(gamma=g_new)
            obj_new, joint_new, _ = ws.objective(new)
            if obj_new < obj_mid - controls.monotonicity_tol:
                accepted = False
                step = g_new - mid.gamma
                for h in range(1, controls.max_halvings + 1):
                    halvings += 1
                    cand = mid.replace(gamma=mid.gamma + step * 0.5 ** h)
                    obj_c, joint_c, _ = ws.objective(cand)
                    if obj_c >= obj_mid - controls.monotonicity_tol:
                        new, obj_new, joint_new = cand, obj_c, joint_c
                        accepted = True
                        break
                if not accepted:
                    rejected += 1
                    new = mid
                    obj_new, joint_new, _ = ws.objective(mid)
        else:
            new = mid
            obj_new, joint_new, _ = ws.objective(new)
        if obj_new < trace[-1] - controls.monotonicity_tol and theta.loss.kind in ("gaussian", "aft"):
            log.warning("objective decreased by %.3g at iteration %d", trace[-1] - obj_new, m)
        change = _theta_change(theta, new)
        theta, joint = new, joint_new
        trace.append(obj_new)
        if change < controls.em_tol:
            converged = True
            break
    return _Run(theta=theta, trace=trace, converged=converged, iterations=m, objective=trace[-1],
                floor_hit=floor_hit, halvings=halvings, rejected_steps=rejected)


def count_df(theta: ThetaState):
    """Intercepts always count; plus nonzero slopes, nonzero gating entries and sigma."""
    df = theta.K + int(np.count_nonzero(theta.beta)) + int(np.count_nonzero(theta.gamma)) + 1
    if theta.gate_intercept is not None:
        df += int(np.count_nonzero(theta.gate_intercept))
    return df


def selected_features(gamma):
    return [int(j) for j in np.nonzero(np.any(gamma != 0, axis=1))[0]]


def fit(data: OmicsDataset, K: int, penalty: PenaltySpec = PenaltySpec(), loss: LossSpec = LossSpec(),
        controls: FitControls = FitControls(), init=None, cold_restarts=True) -> FitResult:
    """Fit by EM from several starts and keep the best penalised objective.

    ``init`` (a ThetaState or FitResult on the original scale) adds a warm
    start; with ``cold_restarts=False`` it is the only start.
    """
    check_dataset(data)
    if K < 1:
        raise ValidationError("K must be >= 1")
    if loss.kind == "aft" and not data.is_survival:
        raise ValidationError("AFT loss needs a survival outcome")
    if loss.kind != "aft" and data.is_survival:
        raise ValidationError(f"loss {loss.kind!r} needs a continuous outcome")
    ws = _Workspace(data, controls)
    q_int = ws.G.shape[1]
    starts = []
    if init is not None:
        th = init.theta if isinstance(init, FitResult) else init
        if th.K != K:
            raise ValidationError("warm start has a different number of clusters")
        th = th.replace(loss=loss, penalty=penalty)
        starts.append((-1, ws.to_internal(th)))
    if init is None or cold_restarts:
        for r in range(controls.n_restarts):
            starts.append((r, initial_theta(data, K, loss, penalty, q_int, controls.rng_seed, r)))
    best = None
    best_idx = None
    diagnostics = []
    for idx, th0 in starts:
        try:
            run = run_em(ws, th0, controls)
        except OgClustError as exc:
            diagnostics.append({"restart": idx, "status": "failed", "error": type(exc).__name__,
                                "message": str(exc)})
            continue
        diagnostics.append({"restart": idx, "status": "ok", "objective": run.objective,
                            "iterations": run.iterations, "converged": run.converged,
                            "halvings": run.halvings, "rejected_gating_steps": run.rejected_steps})
        if best is None or run.objective > best.objective:
            best, best_idx = run, idx
    if best is None:
        raise FitFailure(f"all {len(starts)} starts failed", diagnostics)
    theta_int = best.theta
    W, _ = e_step_from_joint(_joint(theta_int, data, ws.G))
    theta = ws.to_original(theta_int)
    return FitResult(
        theta=theta, weights=W, objective_trace=best.trace, converged=best.converged,
        iterations=best.iterations, selected_features=selected_features(theta.gamma),
        df=count_df(theta), restart_index=best_idx, loglik=ws.loglik(theta_int),
        objective=best.objective, n=data.n, K=K, lam=penalty.lam, sigma_floor_hit=best.floor_hit,
        diagnostics=diagnostics, feature_scale=ws.scale, controls=controls,
    )


def predict(theta: ThetaState, G_new, X_new=None, hard=False):
    """Gating-based prediction for new samples.

    Returns (Pi, z_hat, y_hat): mixing probabilities, the row argmax (ties to
    the lowest index) and the outcome prediction. By default y_hat is the
    mixture mean sum_k pi_ik (beta0_k + x' beta); ``hard=True`` uses the
    argmax cluster's line instead.
    """
    G_new = np.atleast_2d(np.asarray(G_new, dtype=float))
    if G_new.shape[1] != theta.gamma.shape[0]:
        raise ValidationError(f"expected {theta.gamma.shape[0]} features, got {G_new.shape[1]}")
    n = G_new.shape[0]
    X_new = np.zeros((n, 0)) if X_new is None else np.atleast_2d(np.asarray(X_new, dtype=float))
    if X_new.shape[0] != n and X_new.size == 0:
        X_new = np.zeros((n, 0))
    if X_new.shape != (n, len(theta.beta)):
        raise ValidationError(f"expected covariates of shape {(n, len(theta.beta))}, got {X_new.shape}")
    Pi = mixing_probs(theta.gamma, G_new, theta.gate_intercept)
    z = np.argmax(Pi, axis=1)
    lp = linear_predictor(theta, X_new)
    if hard:
        y = lp[np.arange(n), z]
    else:
        y = (Pi * lp).sum(axis=1)
    return Pi, z, y


def posterior_labels(theta: ThetaState, data: OmicsDataset):
    """Argmax of the posterior weights, which use the observed outcome."""
    return np.argmax(e_step(theta, data), axis=1)


def display_rank(theta: ThetaState):
    """Map internal cluster index -> position in ascending-intercept order."""
    order = theta.display_order()
    rank = np.empty(theta.K, dtype=int)
    rank[order] = np.arange(theta.K)
    return rank
