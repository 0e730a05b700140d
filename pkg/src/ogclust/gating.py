"""Penalised weighted multinomial-logistic update of the gating coefficients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import NonConvergenceError

W_MIN = 1e-5
W_MAX = 0.25


@dataclass(frozen=True)
class QuadApprox:
    """Working responses ``H`` and working weights ``Wq`` (both n x K)."""

    H: np.ndarray
    Wq: np.ndarray


def soft_threshold(z, lam):
    return np.sign(z) * np.maximum(np.abs(z) - lam, 0.0)


def build_quad_approx(W, Pi, gamma, G, intercept=None, w_min=W_MIN):
    """Second-order expansion of sum_ik w_ik log pi_ik around the current gamma.

    h_ik = g_i' gamma_k + (w_ik - pi_ik) / W_ik with W_ik = pi_ik (1 - pi_ik)
    clamped to [w_min, 0.25].
    """
    W = np.asarray(W, dtype=float)
    Pi = np.asarray(Pi, dtype=float)
    Wq = np.clip(Pi * (1.0 - Pi), w_min, W_MAX)
    eta = np.asarray(G, dtype=float) @ np.asarray(gamma, dtype=float)
    if intercept is not None:
        eta = eta + intercept
    H = eta + (W - Pi) / Wq
    return QuadApprox(H=H, Wq=Wq)


def _penalty_factors(q, penalty_factor):
    if penalty_factor is None:
        return np.ones(q)
    return np.asarray(penalty_factor, dtype=float)


def _setup(qa, gamma_init, G):
    G = np.asarray(G, dtype=float)
    gamma = np.array(gamma_init, dtype=float, copy=True)
    R = qa.H - G @ gamma
    D = (G * G).T @ qa.Wq
    return G, gamma, R, D


def cd_lasso_update(qa: QuadApprox, gamma_init, G, lam, penalty_factor=None, tol=1e-7,
                    max_sweeps=1000, use_numba=None):
    """Cyclic coordinate descent (cluster outer, feature inner) with soft thresholding.

    The last column of gamma is the reference and stays at zero. Raises
    :class:`NonConvergenceError` (carrying the last iterate) when ``max_sweeps``
    sweeps do not bring the largest coordinate change below ``tol``.
    """
    G, gamma, R, D = _setup(qa, gamma_init, G)
    K = gamma.shape[1]
    gamma[:, K - 1] = 0.0
    pf = _penalty_factors(G.shape[1], penalty_factor)
    out, _, sweeps, ok = kernels.lasso_cd(G, qa.Wq, R, gamma, D, lam, pf, K - 1, tol, max_sweeps,
                                          use_numba=use_numba)
    if not ok:
        raise NonConvergenceError(f"lasso coordinate descent did not converge in {max_sweeps} sweeps",
                                  last=np.ascontiguousarray(out), iterations=sweeps)
    return np.ascontiguousarray(out)


def group_lasso_ridge_update(qa: QuadApprox, gamma_init, G, lam, alpha=0.5, penalty_factor=None,
                             tol=1e-7, max_sweeps=1000, use_numba=None):
    """Block coordinate descent over feature rows for lam * (||gamma_[j]|| + alpha ||gamma_[j]||^2).

    Only the K-1 free columns enter each row block; the row is set to zero
    exactly when the norm of its unpenalised block score is at most lam.
    """
    G, gamma, R, D = _setup(qa, gamma_init, G)
    K = gamma.shape[1]
    gamma[:, K - 1] = 0.0
    pf = _penalty_factors(G.shape[1], penalty_factor)
    out, _, sweeps, ok = kernels.group_cd(G, qa.Wq, R, gamma, D, lam, alpha, pf, K - 1, tol,
                                          max_sweeps, use_numba=use_numba)
    if not ok:
        raise NonConvergenceError(f"group coordinate descent did not converge in {max_sweeps} sweeps",
                                  last=np.ascontiguousarray(out), iterations=sweeps)
    return np.ascontiguousarray(out)


def update_gamma(qa, gamma_init, G, penalty, penalty_factor=None, tol=1e-7, max_sweeps=1000):
    if penalty.kind == "lasso":
        return cd_lasso_update(qa, gamma_init, G, penalty.lam, penalty_factor, tol, max_sweeps)
    return group_lasso_ridge_update(qa, gamma_init, G, penalty.lam, penalty.alpha, penalty_factor,
                                    tol, max_sweeps)


def lambda_max(qa: QuadApprox, G, kind, penalty_factor=None):
    """Smallest lambda for which the zero matrix solves the quadratic subproblem.

    ``qa`` must be built at gamma = 0.
    """
    G = np.asarray(G, dtype=float)
    K = qa.H.shape[1]
    score = G.T @ (qa.Wq[:, : K - 1] * qa.H[:, : K - 1])
    pf = _penalty_factors(G.shape[1], penalty_factor)
    keep = pf > 0
    if not keep.any() or K < 2:
        return 0.0
    if kind == "lasso":
        per_row = np.abs(score).max(axis=1)
    else:
        per_row = np.sqrt((score ** 2).sum(axis=1))
    return float((per_row[keep] / pf[keep]).max())


def quad_objective(qa: QuadApprox, gamma, G, penalty, penalty_factor=None):
    """Penalised quadratic surrogate minimised by the update (free columns only)."""
    G = np.asarray(G, dtype=float)
    K = gamma.shape[1]
    R = qa.H[:, : K - 1] - G @ gamma[:, : K - 1]
    loss = 0.5 * float((qa.Wq[:, : K - 1] * R * R).sum())
    pf = _penalty_factors(G.shape[1], penalty_factor)
    g = gamma[:, : K - 1] * pf[:, None]
    if penalty.kind == "lasso":
        pen = np.abs(g).sum()
    else:
        pen = np.sqrt((g ** 2).sum(axis=1)).sum() + penalty.alpha * (g ** 2).sum()
    return loss + penalty.lam * float(pen)
