"""Robust outcome M-steps: median truncation, fixed Huber and adaptive Huber.

All three replace the Gaussian log-density with a loss on the residuals
e_ik = y_i - beta0_k - x_i' beta. In the E-step the loss enters through the
pseudo-density exp(-loss(e) / sigma^2), which coincides with the Gaussian
kernel wherever the loss is quadratic.
"""
from __future__ import annotations

import math
import warnings

import numpy as np
from scipy.optimize import brentq

from .core import SIGMA_FLOOR, OmicsDataset, ThetaState, residuals
from .errors import DegenerateFitError, EmptyClusterError, NoRootError

HUBER_TAU = 1.345


def huber_loss(e, tau):
    a = np.abs(e)
    return np.where(a <= tau, 0.5 * e * e, tau * a - 0.5 * tau * tau)


def lower_median(a, axis=0):
    a = np.sort(np.asarray(a, dtype=float), axis=axis)
    m = (a.shape[axis] - 1) // 2
    return np.take(a, m, axis=axis)


def median_cutoffs(E):
    """Per-cluster cutoffs tau_k = median_i |e_ik| (lower median for even n)."""
    return lower_median(np.abs(E), axis=0)


def robust_loss_matrix(E, theta: ThetaState):
    kind = theta.loss.kind
    if kind == "median":
        tau = median_cutoffs(E)
        return 0.5 * np.minimum(E * E, tau[None, :] ** 2)
    tau = current_tau(theta)
    return huber_loss(E, tau)


def current_tau(theta: ThetaState):
    if theta.tau is not None and theta.loss.kind in ("huber", "adhuber"):
        return float(theta.tau[0])
    return float(theta.loss.tau)


def pseudo_logdens(theta: ThetaState, data: OmicsDataset):
    """log pseudo-density: -loss(e)/sigma^2 - log sigma - log(2 pi)/2.

    For median truncation the loss is capped at tau_k^2/2 beyond the cutoff
    so that far-away samples do not look like perfect fits.
    """
    E = residuals(theta, data)
    s = theta.sigma
    return -robust_loss_matrix(E, theta) / (s * s) - math.log(s) - 0.5 * math.log(2 * math.pi)


def truncated_update(W, y, X, beta0, beta, inlier, tau=None):
    """One pass of the truncated / Huber score updates.

    ``inlier`` is the n x K indicator I(|e_ik| <= cutoff) at the old residuals.
    With ``tau`` given, exceedances contribute tau * sign(e_ik) to the
    location updates and (2 tau |e| - tau^2) to the scale update.
    Returns (beta0, beta, sigma, E_new).
    """
    W = np.asarray(W, dtype=float)
    X = np.asarray(X, dtype=float)
    V = W * inlier
    den0 = V.sum(axis=0)
    if np.any(den0 < 1e-10):
        k = int(np.argmin(den0))
        if tau is None:
            raise EmptyClusterError(f"cluster {k + 1} has no effective weight after truncation", k + 1)
        raise DegenerateFitError(f"cluster {k + 1}: no weight on the quadratic branch")
    xb = X @ beta if X.shape[1] else np.zeros(len(y))
    E_old = y[:, None] - beta0[None, :] - xb[:, None]
    if tau is not None:
        lin = np.where(inlier, 0.0, tau * np.sign(E_old))
        WL = W * lin
    else:
        WL = None
    num0 = (V * (y - xb)[:, None]).sum(axis=0)
    if WL is not None:
        num0 = num0 + WL.sum(axis=0)
    beta0_new = num0 / den0
    beta_new = np.array(beta, dtype=float, copy=True)
    vrow = V.sum(axis=1)
    lrow = WL.sum(axis=1) if WL is not None else None
    vb0 = V @ beta0_new
    for ell in range(X.shape[1]):
        x = X[:, ell]
        den = float((vrow * x * x).sum())
        if den < 1e-10:
            continue
        partial = y - xb + x * beta_new[ell]
        num = float((x * (vrow * partial - vb0)).sum())
        if lrow is not None:
            num += float((x * lrow).sum())
        new = num / den
        xb = xb + x * (new - beta_new[ell])
        beta_new[ell] = new
    E_new = y[:, None] - beta0_new[None, :] - xb[:, None]
    tot = float(V.sum())
    s2 = float((V * E_new * E_new).sum())
    if tau is not None:
        s2 += float((W * np.where(inlier, 0.0, 2 * tau * np.abs(E_new) - tau * tau)).sum())
    sigma = max(math.sqrt(max(s2 / tot, 0.0)), SIGMA_FLOOR)
    return beta0_new, beta_new, sigma, E_new


def mstep_median_truncated(W, data: OmicsDataset, theta_prev: ThetaState):
    E = residuals(theta_prev, data)
    tau_k = median_cutoffs(E)
    inlier = np.abs(E) <= tau_k[None, :]
    b0, b, s, _ = truncated_update(W, data.response, data.X, theta_prev.beta0, theta_prev.beta, inlier)
    return b0, b, s


def mstep_huber_fixed(W, data: OmicsDataset, theta_prev: ThetaState, tau=HUBER_TAU):
    if not tau > 0:
        raise ValueError("tau must be positive")
    E = residuals(theta_prev, data)
    inlier = np.abs(E) <= tau
    b0, b, s, _ = truncated_update(W, data.response, data.X, theta_prev.beta0, theta_prev.beta,
                                   inlier, tau=tau)
    return b0, b, s


def adaptive_tau_equation(tau, E, W, p, z):
    """g2(tau) = (n-p)^-1 sum_ik w_ik min(e^2, tau^2)/tau^2 - (p+z)/n."""
    E = np.asarray(E, dtype=float)
    n = E.shape[0]
    W = np.ones_like(E) if W is None else np.asarray(W, dtype=float)
    r = np.minimum(E * E, tau * tau) / (tau * tau)
    return float((W * r).sum()) / (n - p) - (p + z) / n


def solve_adaptive_tau(E, W, p, z, rtol=1e-8):
    """Root of the tau-calibration equation.

    On tau >= max|e| the equation has the closed form root
    sqrt(n sum w e^2 / ((n-p)(p+z))); otherwise the root is bracketed
    between 1e-8 * max|e| and max|e| and found by Brent's method.
    """
    E = np.asarray(E, dtype=float)
    n = E.shape[0]
    W = np.ones_like(E) if W is None else np.asarray(W, dtype=float)
    emax = float(np.abs(E).max()) if E.size else 0.0
    if emax == 0.0:
        raise NoRootError("all residuals are zero; calibration equation has no root")
    g_hi = adaptive_tau_equation(emax, E, W, p, z)
    if g_hi >= 0:
        ss = float((W * E * E).sum())
        return math.sqrt(n * ss / ((n - p) * (p + z)))
    lo = 1e-8 * emax
    g_lo = adaptive_tau_equation(lo, E, W, p, z)
    if g_lo <= 0:
        raise NoRootError("calibration equation has no sign change on (0, max|e|]")
    return float(brentq(adaptive_tau_equation, lo, emax, args=(E, W, p, z), xtol=1e-14 * emax,
                        rtol=max(rtol * 1e-4, 4 * np.finfo(float).eps), maxiter=500))


def mstep_huber_adaptive(W, data: OmicsDataset, theta_prev: ThetaState, z=None, tol=1e-6,
                         max_alternations=50):
    """Alternate fixed-tau Huber updates with tau calibration.

    Returns (beta0, beta, sigma, tau). Falls back to tau = 1.345 when the
    calibration equation has no root.
    """
    n, p = data.n, data.p
    z = math.log(n) if z is None else z
    theta = theta_prev
    if theta.tau is not None and theta.loss.kind == "adhuber":
        tau = float(theta.tau[0])
    else:
        try:
            tau = solve_adaptive_tau(residuals(theta, data), W, p, z)
        except NoRootError:
            tau = HUBER_TAU
    for _ in range(max_alternations):
        b0, b, s = mstep_huber_fixed(W, data, theta, tau)
        new = theta.replace(beta0=b0, beta=b, sigma=s)
        try:
            tau_new = solve_adaptive_tau(residuals(new, data), W, p, z)
        except NoRootError:
            tau_new = HUBER_TAU
        change = max(np.abs(b0 - theta.beta0).max(),
                     np.abs(b - theta.beta).max() if p else 0.0,
                     abs(s - theta.sigma), abs(tau_new - tau))
        theta, tau = new, tau_new
        if change < tol:
            break
    else:
        warnings.warn("adaptive Huber alternation hit its cap", RuntimeWarning, stacklevel=2)
    return theta.beta0, theta.beta, theta.sigma, tau
