"""Accelerated failure time outcome model with log-logistic errors.

On the log-time scale, log T = beta0_k + x' beta + sigma * W with W standard
logistic. For standardised residual w, the survivor function is
1 / (1 + e^w) and the density e^w / (1 + e^w)^2.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from .core import SIGMA_FLOOR, OmicsDataset, ThetaState
from .errors import IllPosedError, ValidationError


@dataclass(frozen=True)
class AftParams:
    beta0: np.ndarray
    beta: np.ndarray
    sigma: float
    converged: bool = True
    grad_norm: float = 0.0


def _softplus(w):
    return np.logaddexp(0.0, w)


def aft_loglik_ik(t, delta, x, beta0k, beta, sigma):
    """Log-likelihood contribution of one sample under one cluster."""
    if not t > 0:
        raise ValidationError(f"survival time must be positive, got {t!r}")
    x = np.atleast_1d(np.asarray(x, dtype=float))
    beta = np.atleast_1d(np.asarray(beta, dtype=float))
    xb = float(x @ beta) if x.size else 0.0
    w = (np.log(t) - beta0k - xb) / sigma
    return float(delta * (w - np.log(sigma)) - (1.0 + delta) * _softplus(w))


def aft_loglik_matrix(time, event, X, beta0, beta, sigma):
    """n x K matrix of log L_ik."""
    X = np.asarray(X, dtype=float)
    xb = X @ beta if X.shape[1] else np.zeros(len(time))
    w = (np.log(time)[:, None] - beta0[None, :] - xb[:, None]) / sigma
    d = np.asarray(event, dtype=float)[:, None]
    return d * (w - np.log(sigma)) - (1.0 + d) * _softplus(w)


def _pack(beta0, beta, sigma):
    return np.concatenate([beta0, beta, [np.log(sigma)]])


def weighted_objective(params, W, logt, event, X):
    """Returns (sum_ik W_ik log L_ik, gradient) in (beta0, beta, log sigma) coordinates."""
    K = W.shape[1]
    p = X.shape[1]
    beta0 = params[:K]
    beta = params[K:K + p]
    s = params[K + p]
    sigma = np.exp(s)
    xb = X @ beta if p else np.zeros(len(logt))
    w = (logt[:, None] - beta0[None, :] - xb[:, None]) / sigma
    d = event[:, None]
    ll = d * (w - s) - (1.0 + d) * _softplus(w)
    val = float((W * ll).sum())
    psi = W * (d - (1.0 + d) * expit(w))
    g_b0 = -psi.sum(axis=0) / sigma
    g_b = -(X.T @ psi.sum(axis=1)) / sigma if p else np.zeros(0)
    g_s = float(-(psi * w).sum() - (W * d).sum())
    return val, np.concatenate([g_b0, g_b, [g_s]])


def aft_mstep(W, data: OmicsDataset, theta_prev: ThetaState, max_iter=200, gtol=1e-6) -> AftParams:
    """Maximise sum_ik w_ik log L_ik over (beta0, beta, sigma) by L-BFGS.

    sigma is optimised on the log scale. Clusters without any weighted
    event make the intercept unbounded and raise :class:`IllPosedError`.
    """
    if not data.is_survival:
        raise ValidationError("AFT M-step needs a survival outcome")
    W = np.asarray(W, dtype=float)
    event = np.asarray(data.event, dtype=float)
    wev = (W * event[:, None]).sum(axis=0)
    if np.any(wev < 1e-10):
        k = int(np.argmin(wev))
        raise IllPosedError(f"cluster {k + 1} carries no observed events")
    logt = np.log(data.time)
    X = np.asarray(data.X, dtype=float)
    x0 = _pack(theta_prev.beta0, theta_prev.beta, max(theta_prev.sigma, SIGMA_FLOOR))

    def f(z):
        v, g = weighted_objective(z, W, logt, event, X)
        return -v, -g

    res = minimize(f, x0, jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iter, "gtol": gtol, "ftol": 1e-15, "maxcor": 20})
    z = res.x
    gnorm = float(np.abs(res.jac).max())
    ok = gnorm < gtol
    if not ok and res.nit >= max_iter:
        warnings.warn(f"AFT M-step stopped after {res.nit} iterations (|grad|={gnorm:.2e})",
                      RuntimeWarning, stacklevel=2)
    K = W.shape[1]
    p = X.shape[1]
    sigma = max(float(np.exp(z[K + p])), SIGMA_FLOOR)
    return AftParams(beta0=z[:K].copy(), beta=z[K:K + p].copy(), sigma=sigma, converged=ok,
                     grad_norm=gnorm)
