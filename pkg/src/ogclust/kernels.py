"""Coordinate-descent sweeps for the gating subproblem.

Each solver minimises, column by column (k < n_free),

    1/2 sum_i Wq[i,k] (h[i,k] - g_i' gamma_k)^2 + lam * penalty(gamma)

working on the residual matrix ``R = H - G @ gamma`` in place. Two
implementations exist: ``*_nb`` compiled with numba and ``*_np`` in plain
numpy. ``lasso_cd`` / ``group_cd`` dispatch on ``_accel.USE_NUMBA``.

Return value of every solver: ``(sweeps, converged)``.
"""
import numpy as np

from . import _accel
from ._accel import njit


# -- lasso -----------------------------------------------------------------


@njit
def _lasso_column_nb(G, wk, rk, gk, dk, lam, pf, active, only_active):
    n, q = G.shape
    maxchg = 0.0
    for j in range(q):
        if only_active and not active[j]:
            continue
        d = dk[j]
        old = gk[j]
        if d <= 0.0:
            continue
        z = 0.0
        for i in range(n):
            z += wk[i] * G[i, j] * rk[i]
        z += d * old
        thr = lam * pf[j]
        if z > thr:
            new = (z - thr) / d
        elif z < -thr:
            new = (z + thr) / d
        else:
            new = 0.0
        if new != old:
            delta = new - old
            for i in range(n):
                rk[i] -= G[i, j] * delta
            gk[j] = new
            if abs(delta) > maxchg:
                maxchg = abs(delta)
        active[j] = new != 0.0
    return maxchg


@njit
def lasso_cd_nb(G, Wq, R, gamma, D, lam, pf, n_free, tol, max_sweeps):
    n, q = G.shape
    total = 0
    converged = True
    for k in range(n_free):
        wk = Wq[:, k].copy()
        rk = R[:, k].copy()
        gk = gamma[:, k].copy()
        dk = D[:, k].copy()
        active = gk != 0.0
        sweeps = 0
        ok = False
        while sweeps < max_sweeps:
            chg = _lasso_column_nb(G, wk, rk, gk, dk, lam, pf, active, False)
            sweeps += 1
            if chg < tol:
                ok = True
                break
            while sweeps < max_sweeps:
                chg = _lasso_column_nb(G, wk, rk, gk, dk, lam, pf, active, True)
                sweeps += 1
                if chg < tol:
                    break
        R[:, k] = rk
        gamma[:, k] = gk
        total += sweeps
        if not ok:
            converged = False
    return total, converged


def _lasso_column_np(G, wk, rk, gk, dk, lam, pf, active, only_active):
    maxchg = 0.0
    idx = np.nonzero(active)[0] if only_active else range(G.shape[1])
    wr = wk * rk
    for j in idx:
        d = dk[j]
        if d <= 0.0:
            continue
        old = gk[j]
        gj = G[:, j]
        z = gj @ wr + d * old
        thr = lam * pf[j]
        new = np.sign(z) * max(abs(z) - thr, 0.0) / d
        if new != old:
            delta = new - old
            rk -= gj * delta
            wr = wk * rk
            gk[j] = new
            maxchg = max(maxchg, abs(delta))
        active[j] = new != 0.0
    return maxchg


def lasso_cd_np(G, Wq, R, gamma, D, lam, pf, n_free, tol, max_sweeps):
    total = 0
    converged = True
    for k in range(n_free):
        wk = Wq[:, k].copy()
        rk = R[:, k].copy()
        gk = gamma[:, k].copy()
        dk = D[:, k]
        active = gk != 0.0
        sweeps = 0
        ok = False
        while sweeps < max_sweeps:
            chg = _lasso_column_np(G, wk, rk, gk, dk, lam, pf, active, False)
            sweeps += 1
            if chg < tol:
                ok = True
                break
            while sweeps < max_sweeps:
                chg = _lasso_column_np(G, wk, rk, gk, dk, lam, pf, active, True)
                sweeps += 1
                if chg < tol:
                    break
        R[:, k] = rk
        gamma[:, k] = gk
        total += sweeps
        converged = converged and ok
    return total, converged


# -- group lasso + ridge -----------------------------------------------------


@njit
def _group_norm_solve_nb(b, a, lam):
    # root t > 0 of sum_k b_k^2 / (a_k t + lam)^2 = 1; convex decreasing, Newton from 0
    t = 0.0
    for _ in range(100):
        f = -1.0
        fp = 0.0
        for k in range(b.shape[0]):
            den = a[k] * t + lam
            f += b[k] * b[k] / (den * den)
            fp -= 2.0 * a[k] * b[k] * b[k] / (den * den * den)
        if fp == 0.0:
            break
        step = f / fp
        t -= step
        if abs(step) <= 1e-15 * max(t, 1e-300):
            break
    return t


@njit
def _group_sweep_nb(G, Wq, R, gamma, D, lam, alpha, pf, n_free, active, only_active):
    n, q = G.shape
    maxchg = 0.0
    b = np.empty(n_free)
    a = np.empty(n_free)
    for j in range(q):
        if only_active and not active[j]:
            continue
        thr = lam * pf[j]
        ridge = 2.0 * lam * alpha * pf[j]
        usable = False
        for k in range(n_free):
            d = D[j, k]
            s = 0.0
            for i in range(n):
                s += Wq[i, k] * G[i, j] * R[i, k]
            b[k] = s + d * gamma[j, k]
            a[k] = d + ridge
            if d > 0.0:
                usable = True
        if not usable:
            continue
        bn = 0.0
        for k in range(n_free):
            bn += b[k] * b[k]
        bn = np.sqrt(bn)
        t = 0.0
        if bn > thr and thr > 0.0:
            t = _group_norm_solve_nb(b, a, thr)
        nonzero = False
        for k in range(n_free):
            if bn <= thr:
                new = 0.0
            elif thr > 0.0:
                new = b[k] * t / (a[k] * t + thr)
            elif a[k] > 0.0:
                new = b[k] / a[k]
            else:
                new = 0.0
            old = gamma[j, k]
            if new != old:
                delta = new - old
                for i in range(n):
                    R[i, k] -= G[i, j] * delta
                gamma[j, k] = new
                if abs(delta) > maxchg:
                    maxchg = abs(delta)
            if new != 0.0:
                nonzero = True
        active[j] = nonzero
    return maxchg


@njit
def group_cd_nb(G, Wq, R, gamma, D, lam, alpha, pf, n_free, tol, max_sweeps):
    q = G.shape[1]
    active = np.zeros(q, dtype=np.bool_)
    for j in range(q):
        for k in range(n_free):
            if gamma[j, k] != 0.0:
                active[j] = True
    sweeps = 0
    while sweeps < max_sweeps:
        chg = _group_sweep_nb(G, Wq, R, gamma, D, lam, alpha, pf, n_free, active, False)
        sweeps += 1
        if chg < tol:
            return sweeps, True
        while sweeps < max_sweeps:
            chg = _group_sweep_nb(G, Wq, R, gamma, D, lam, alpha, pf, n_free, active, True)
            sweeps += 1
            if chg < tol:
                break
    return sweeps, False


def group_norm_solve(b, a, lam):
    """Positive root t of sum_k b_k^2 / (a_k t + lam)^2 = 1 (Newton from t = 0)."""
    t = 0.0
    for _ in range(100):
        den = a * t + lam
        f = np.sum(b * b / den ** 2) - 1.0
        fp = -2.0 * np.sum(a * b * b / den ** 3)
        if fp == 0.0:
            break
        step = f / fp
        t -= step
        if abs(step) <= 1e-15 * max(t, 1e-300):
            break
    return t


def _group_sweep_np(G, Wq, R, gamma, D, lam, alpha, pf, n_free, active, only_active):
    maxchg = 0.0
    idx = np.nonzero(active)[0] if only_active else range(G.shape[1])
    WR = Wq[:, :n_free] * R[:, :n_free]
    for j in idx:
        d = D[j, :n_free]
        if not (d > 0).any():
            continue
        gj = G[:, j]
        thr = lam * pf[j]
        a = d + 2.0 * lam * alpha * pf[j]
        old = gamma[j, :n_free].copy()
        b = gj @ WR + d * old
        bn = np.sqrt(b @ b)
        if bn <= thr:
            new = np.zeros(n_free)
        elif thr == 0.0:
            new = np.where(a > 0, b / np.where(a > 0, a, 1.0), 0.0)
        else:
            t = group_norm_solve(b, a, thr)
            new = b * t / (a * t + thr)
        delta = new - old
        if np.any(delta != 0):
            R[:, :n_free] -= np.outer(gj, delta)
            WR = Wq[:, :n_free] * R[:, :n_free]
            gamma[j, :n_free] = new
            maxchg = max(maxchg, float(np.abs(delta).max()))
        active[j] = bool(np.any(new != 0))
    return maxchg


def group_cd_np(G, Wq, R, gamma, D, lam, alpha, pf, n_free, tol, max_sweeps):
    active = (gamma[:, :n_free] != 0).any(axis=1)
    sweeps = 0
    while sweeps < max_sweeps:
        chg = _group_sweep_np(G, Wq, R, gamma, D, lam, alpha, pf, n_free, active, False)
        sweeps += 1
        if chg < tol:
            return sweeps, True
        while sweeps < max_sweeps:
            chg = _group_sweep_np(G, Wq, R, gamma, D, lam, alpha, pf, n_free, active, True)
            sweeps += 1
            if chg < tol:
                break
    return sweeps, False


def _prep(G, Wq, R, gamma, D, pf):
    return (np.asfortranarray(G, dtype=np.float64), np.asfortranarray(Wq, dtype=np.float64),
            np.asfortranarray(R, dtype=np.float64), np.asfortranarray(gamma, dtype=np.float64),
            np.ascontiguousarray(D, dtype=np.float64), np.ascontiguousarray(pf, dtype=np.float64))


def lasso_cd(G, Wq, R, gamma, D, lam, pf, n_free, tol=1e-7, max_sweeps=1000, use_numba=None):
    """Dispatching Lasso solver; returns ``(gamma, R, sweeps, converged)``."""
    use_numba = _accel.USE_NUMBA if use_numba is None else use_numba
    G, Wq, R, gamma, D, pf = _prep(G, Wq, R, gamma.copy(), D, pf)
    fn = lasso_cd_nb if use_numba else lasso_cd_np
    sweeps, ok = fn(G, Wq, R, gamma, D, float(lam), pf, int(n_free), float(tol), int(max_sweeps))
    return gamma, R, int(sweeps), bool(ok)


def group_cd(G, Wq, R, gamma, D, lam, alpha, pf, n_free, tol=1e-7, max_sweeps=1000, use_numba=None):
    """Dispatching group-lasso + ridge solver; returns ``(gamma, R, sweeps, converged)``."""
    use_numba = _accel.USE_NUMBA if use_numba is None else use_numba
    G, Wq, R, gamma, D, pf = _prep(G, Wq, R, gamma.copy(), D, pf)
    fn = group_cd_nb if use_numba else group_cd_np
    sweeps, ok = fn(G, Wq, R, gamma, D, float(lam), float(alpha), pf, int(n_free), float(tol),
                    int(max_sweeps))
    return gamma, R, int(sweeps), bool(ok)
