"""Numba vs numpy coordinate-descent kernels on a full-size gating subproblem.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--fit]

The subproblem is the quadratic approximation at the start of a fit on
simulated Model 2 data (n=600, q=1000, K=3). ``--fit`` also times one
complete EM fit under each backend in a fresh interpreter, switching with
OGCLUST_DISABLE_JIT.
"""
import argparse
import os
import subprocess
import sys
import time

import numpy as np

from ogclust import em, gating, simbench
from ogclust._accel import HAVE_NUMBA
from ogclust.core import LossSpec, PenaltySpec, mixing_probs


def subproblem(seed=0):
    data, _ = simbench.generate_dataset(simbench.SimConfig.model(2, seed=seed))
    ws = em._Workspace(data, em.FitControls())
    th = em.initial_theta(data, 3, LossSpec(), PenaltySpec("group", 0.0), ws.G.shape[1], 0, 0)
    W = em.e_step_from_joint(em._joint(th, data, ws.G))[0]
    qa = gating.build_quad_approx(W, mixing_probs(th.gamma, ws.G), th.gamma, ws.G)
    lmax = gating.lambda_max(qa, ws.G, "group")
    return qa, ws.G, th.gamma, lmax


def timeit(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


FIT_SNIPPET = """
import time, warnings
warnings.simplefilter("ignore")
from ogclust import em, simbench
from ogclust.core import PenaltySpec
data, _ = simbench.generate_dataset(simbench.SimConfig.model(2, seed=0))
em.fit(data, 3, PenaltySpec("group", 30.0), controls=em.FitControls(n_restarts=1, max_em_iters=5))
t = time.perf_counter()
r = em.fit(data, 3, PenaltySpec("group", 30.0), controls=em.FitControls(n_restarts=1))
print(time.perf_counter() - t, r.iterations)
"""


def time_fit(disable_jit):
    env = dict(os.environ, OGCLUST_DISABLE_JIT="1" if disable_jit else "0")
    out = subprocess.run([sys.executable, "-c", FIT_SNIPPET], env=env, capture_output=True, text=True,
                         check=True)
    secs, iters = out.stdout.split()
    return float(secs), int(iters)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--fit", action="store_true", help="also time a whole EM fit per backend")
    args = ap.parse_args()

    qa, G, g0, lmax = subproblem()
    print(f"subproblem n={G.shape[0]} q={G.shape[1]} K={g0.shape[1]}  lambda_max={lmax:.4g}")
    backends = [False] + ([True] if HAVE_NUMBA else [])
    if not HAVE_NUMBA:
        print("numba not importable: numpy kernels only")
    for ratio in (0.5, 0.2, 0.05):
        lam = ratio * lmax
        for kind in ("lasso", "group"):
            res = {}
            for nb in backends:
                if kind == "lasso":
                    fn = lambda: gating.cd_lasso_update(qa, g0, G, lam, use_numba=nb)
                else:
                    fn = lambda: gating.group_lasso_ridge_update(qa, g0, G, lam, 0.5, use_numba=nb)
                fn()  # compile / warm caches
                res[nb] = timeit(fn, args.repeat)
            line = f"{kind:5s} lambda={ratio:4.2f}*max  numpy {res[False][0] * 1e3:8.2f} ms"
            if True in res:
                diff = float(np.abs(res[True][1] - res[False][1]).max())
                line += (f"  numba {res[True][0] * 1e3:8.2f} ms  speedup {res[False][0] / res[True][0]:5.1f}x"
                         f"  max|diff| {diff:.1e}")
            nnz = int((np.abs(res[False][1]).sum(axis=1) > 0).sum())
            print(line + f"  rows kept {nnz}")
    if args.fit:
        for disable in ([True, False] if HAVE_NUMBA else [True]):
            secs, iters = time_fit(disable)
            name = "numpy" if disable else "numba"
            print(f"full fit ({name}): {secs:.2f} s for {iters} EM iterations ({secs / iters * 1e3:.1f} ms/iter)")


if __name__ == "__main__":
    main()
