"""Data model, validation and likelihood primitives."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import NumericalError, ValidationError

SIGMA_FLOOR = 1e-4
LOSS_KINDS = ("gaussian", "huber", "adhuber", "median", "aft")
PENALTY_KINDS = ("lasso", "group")


def _frozen(a, ndim):
    a = np.array(a, dtype=float, copy=True)
    if ndim == 2 and a.ndim == 1:
        a = a.reshape(-1, 1) if a.size else a.reshape(a.shape[0], 0)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class OmicsDataset:
    """Outcome, covariates ``X`` (n x p, p may be 0) and features ``G`` (n x q).

    Continuous outcomes live in ``y``; survival outcomes in ``time`` and
    ``event`` (1 = event observed, 0 = right-censored).
    """

    X: np.ndarray
    G: np.ndarray
    y: Optional[np.ndarray] = None
    time: Optional[np.ndarray] = None
    event: Optional[np.ndarray] = None
    sample_ids: tuple = ()
    feature_ids: tuple = ()
    covariate_ids: tuple = ()

    @classmethod
    def continuous(cls, y, G, X=None, sample_ids=None, feature_ids=None, covariate_ids=None):
        y = np.asarray(y, dtype=float)
        G = np.asarray(G, dtype=float)
        X = np.zeros((len(y), 0)) if X is None else np.asarray(X, dtype=float)
        return cls._build(X, G, y=y, sample_ids=sample_ids, feature_ids=feature_ids,
                          covariate_ids=covariate_ids)

    @classmethod
    def survival(cls, time, event, G, X=None, sample_ids=None, feature_ids=None,
                 covariate_ids=None):
        time = np.asarray(time, dtype=float)
        G = np.asarray(G, dtype=float)
        X = np.zeros((len(time), 0)) if X is None else np.asarray(X, dtype=float)
        return cls._build(X, G, time=time, event=np.asarray(event, dtype=float),
                          sample_ids=sample_ids, feature_ids=feature_ids,
                          covariate_ids=covariate_ids)

    @classmethod
    def _build(cls, X, G, y=None, time=None, event=None, sample_ids=None, feature_ids=None,
               covariate_ids=None):
        X = _frozen(X, 2)
        G = _frozen(G, 2)
        n = len(y) if y is not None else len(time)
        if sample_ids is None:
            sample_ids = tuple(f"S{i + 1}" for i in range(n))
        if feature_ids is None:
            feature_ids = tuple(f"G{j + 1}" for j in range(G.shape[1]))
        if covariate_ids is None:
            covariate_ids = tuple(f"X{j + 1}" for j in range(X.shape[1]))
        return cls(
            X=X, G=G,
            y=None if y is None else _frozen(y, 1),
            time=None if time is None else _frozen(time, 1),
            event=None if event is None else _frozen(event, 1),
            sample_ids=tuple(sample_ids), feature_ids=tuple(feature_ids),
            covariate_ids=tuple(covariate_ids),
        )

    @property
    def is_survival(self):
        return self.time is not None

    @property
    def n(self):
        return len(self.time) if self.is_survival else len(self.y)

    @property
    def p(self):
        return self.X.shape[1]

    @property
    def q(self):
        return self.G.shape[1]

    @property
    def response(self):
        """Outcome on the regression scale: ``y`` or ``log(time)``."""
        if self.is_survival:
            return np.log(self.time)
        return self.y

    def subset(self, rows):
        rows = np.asarray(rows)
        ids = tuple(self.sample_ids[i] for i in rows)
        if self.is_survival:
            return OmicsDataset.survival(self.time[rows], self.event[rows], self.G[rows],
                                         self.X[rows], ids, self.feature_ids, self.covariate_ids)
        return OmicsDataset.continuous(self.y[rows], self.G[rows], self.X[rows], ids,
                                       self.feature_ids, self.covariate_ids)

    def with_outcome(self, y):
        return OmicsDataset.continuous(y, self.G, self.X, self.sample_ids, self.feature_ids,
                                       self.covariate_ids)


@dataclass(frozen=True)
class Violation:
    kind: str
    message: str
    row: Optional[int] = None


def validate_dataset(data: OmicsDataset) -> list:
    """Return a list of :class:`Violation`; an empty list means the data are usable.

    Rows are reported 1-based.
    """
    out = []
    n_out = data.n
    if n_out < 1:
        out.append(Violation("empty", "dataset has no samples"))
    for name, arr in (("covariates", data.X), ("features", data.G)):
        if arr.shape[0] != n_out:
            out.append(Violation("dimension", f"{name} have {arr.shape[0]} rows, outcome has {n_out}"))
    if len(data.sample_ids) != n_out:
        out.append(Violation("dimension", f"{len(data.sample_ids)} sample ids for {n_out} samples"))
    if len(data.feature_ids) != data.q:
        out.append(Violation("dimension", f"{len(data.feature_ids)} feature ids for {data.q} features"))
    if data.is_survival:
        if data.event is None or len(data.event) != n_out:
            out.append(Violation("dimension", "event vector length differs from time vector"))
        pairs = [("time", data.time), ("event", data.event)]
    else:
        pairs = [("outcome", data.y)]
    pairs += [("covariates", data.X), ("features", data.G)]
    for name, arr in pairs:
        if arr is None:
            continue
        bad = ~np.isfinite(arr)
        if bad.any():
            rows = np.unique(np.nonzero(bad)[0] if arr.ndim == 2 else np.nonzero(bad)[0])
            for r in rows[:20]:
                out.append(Violation("non-finite", f"non-finite {name} value at row {r + 1}", int(r) + 1))
    if data.is_survival:
        for r in np.nonzero(np.isfinite(data.time) & (data.time <= 0))[0]:
            out.append(Violation("positivity", f"survival time {data.time[r]!r} at row {r + 1} is not positive",
                                 int(r) + 1))
        if data.event is not None:
            for r in np.nonzero(np.isfinite(data.event) & ~np.isin(data.event, (0.0, 1.0)))[0]:
                out.append(Violation("domain", f"event flag {data.event[r]!r} at row {r + 1} is not 0/1",
                                     int(r) + 1))
    return out


def check_dataset(data: OmicsDataset) -> OmicsDataset:
    problems = validate_dataset(data)
    if problems:
        raise ValidationError("; ".join(v.message for v in problems), problems)
    return data


@dataclass(frozen=True)
class LossSpec:
    """Outcome loss. ``tau`` is used by ``huber``; ``z`` by ``adhuber`` (None -> ln n)."""

    kind: str = "gaussian"
    tau: float = 1.345
    z: Optional[float] = None

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValidationError(f"unknown loss {self.kind!r}; expected one of {LOSS_KINDS}")
        if not self.tau > 0:
            raise ValidationError("Huber cutoff tau must be positive")

    @property
    def is_robust(self):
        return self.kind in ("huber", "adhuber", "median")


@dataclass(frozen=True)
class PenaltySpec:
    kind: str = "lasso"
    lam: float = 0.0
    alpha: float = 0.5

    def __post_init__(self):
        if self.kind not in PENALTY_KINDS:
            raise ValidationError(f"unknown penalty {self.kind!r}; expected one of {PENALTY_KINDS}")
        if not self.lam >= 0:
            raise ValidationError("lambda must be >= 0")
        if not 0 <= self.alpha <= 1:
            raise ValidationError("alpha must lie in [0, 1]")

    def with_lambda(self, lam):
        return replace(self, lam=float(lam))


@dataclass(frozen=True)
class ThetaState:
    """Full parameter set.

    ``gamma`` is q x K; by convention the last column is the zero reference.
    ``tau`` carries robust cutoffs (scalar for Huber variants, per-cluster for
    median truncation) and ``gate_intercept`` the optional unpenalised
    gating intercepts.
    """

    beta0: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    sigma: float
    loss: LossSpec = field(default_factory=LossSpec)
    penalty: PenaltySpec = field(default_factory=PenaltySpec)
    tau: Optional[np.ndarray] = None
    gate_intercept: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "beta0", np.asarray(self.beta0, dtype=float).reshape(-1))
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float).reshape(-1))
        g = np.asarray(self.gamma, dtype=float)
        if g.ndim == 1:
            g = g.reshape(-1, len(self.beta0))
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "sigma", float(self.sigma))
        if self.tau is not None:
            object.__setattr__(self, "tau", np.atleast_1d(np.asarray(self.tau, dtype=float)))
        if self.gate_intercept is not None:
            object.__setattr__(self, "gate_intercept",
                               np.asarray(self.gate_intercept, dtype=float).reshape(-1))
        if self.K < 1:
            raise ValidationError("need at least one cluster")
        if self.gamma.shape[1] != self.K:
            raise ValidationError(f"gamma has {self.gamma.shape[1]} columns for K={self.K}")
        if not self.sigma > 0:
            raise ValidationError("sigma must be positive")

    @property
    def K(self):
        return len(self.beta0)

    def replace(self, **kw):
        return replace(self, **kw)

    def check_against(self, data: OmicsDataset):
        if self.gamma.shape[0] != data.q:
            raise ValidationError(f"gamma has {self.gamma.shape[0]} rows but data have q={data.q} features")
        if len(self.beta) != data.p:
            raise ValidationError(f"beta has length {len(self.beta)} but data have p={data.p} covariates")

    def permuted(self, order):
        """Reorder clusters; no re-anchoring, so the zero column moves with its label."""
        order = np.asarray(order)
        tau = self.tau
        if tau is not None and len(tau) == self.K:
            tau = tau[order]
        gi = None if self.gate_intercept is None else self.gate_intercept[order]
        return replace(self, beta0=self.beta0[order], gamma=self.gamma[:, order], tau=tau,
                       gate_intercept=gi)

    def display_order(self):
        """Cluster order by ascending intercept (stable)."""
        return np.argsort(self.beta0, kind="stable")


def logits(gamma, G, intercept=None):
    eta = np.asarray(G, dtype=float) @ np.asarray(gamma, dtype=float)
    if intercept is not None:
        eta = eta + intercept
    return eta


def log_mixing_probs(gamma, G, intercept=None):
    eta = logits(gamma, G, intercept)
    return eta - logsumexp(eta, axis=1, keepdims=True)


def mixing_probs(gamma, G, intercept=None):
    """Row-wise softmax of ``G @ gamma`` with max-subtraction."""
    eta = logits(gamma, G, intercept)
    eta = eta - eta.max(axis=1, keepdims=True)
    P = np.exp(eta)
    P /= P.sum(axis=1, keepdims=True)
    return P


def linear_predictor(theta: ThetaState, X):
    """n x K matrix of beta0_k + x_i' beta."""
    X = np.asarray(X, dtype=float)
    xb = X @ theta.beta if X.shape[1] else np.zeros(X.shape[0])
    return xb[:, None] + theta.beta0[None, :]


def residuals(theta: ThetaState, data: OmicsDataset):
    """e_ik = response_i - beta0_k - x_i' beta (log time for survival outcomes)."""
    return data.response[:, None] - linear_predictor(theta, data.X)


def gaussian_logdens(theta: ThetaState, data: OmicsDataset):
    e = residuals(theta, data)
    s = theta.sigma
    return -0.5 * (e / s) ** 2 - np.log(s) - 0.5 * np.log(2 * np.pi)


def component_logdens(theta: ThetaState, data: OmicsDataset):
    """n x K log component densities for the likelihood-based losses."""
    if theta.loss.kind == "aft":
        from .survival import aft_loglik_matrix

        if not data.is_survival:
            raise ValidationError("AFT loss needs a survival outcome")
        return aft_loglik_matrix(data.time, data.event, data.X, theta.beta0, theta.beta, theta.sigma)
    if theta.loss.kind != "gaussian":
        from .robust import pseudo_logdens

        return pseudo_logdens(theta, data)
    if data.is_survival:
        raise ValidationError("Gaussian loss needs a continuous outcome")
    return gaussian_logdens(theta, data)


def _joint_log(theta: ThetaState, data: OmicsDataset):
    logpi = log_mixing_probs(theta.gamma, data.G, theta.gate_intercept)
    return logpi + component_logdens(theta, data)


def _rowwise_lse(joint):
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        ll = logsumexp(joint, axis=1)
    bad = ~np.isfinite(ll)
    if bad.any():
        i = int(np.nonzero(bad)[0][0])
        raise NumericalError(f"non-finite likelihood at sample {i + 1}", sample=i + 1)
    return ll


def observed_loglik(theta: ThetaState, data: OmicsDataset) -> float:
    """log of prod_i sum_k pi_ik f_k(y_i), via per-sample log-sum-exp.

    Robust losses are evaluated with their pseudo-density.
    """
    theta.check_against(data)
    return float(_rowwise_lse(_joint_log(theta, data)).sum())


def penalty_value(gamma, penalty: PenaltySpec, penalized_rows=None):
    """R(gamma). Rows outside ``penalized_rows`` (a boolean mask) are skipped."""
    g = np.asarray(gamma, dtype=float)
    if penalized_rows is not None:
        g = g[np.asarray(penalized_rows, dtype=bool)]
    if penalty.kind == "lasso":
        return float(np.abs(g).sum())
    return float(np.sqrt((g ** 2).sum(axis=1)).sum() + penalty.alpha * (g ** 2).sum())


def penalized_objective(theta: ThetaState, data: OmicsDataset) -> float:
    ll = observed_loglik(theta, data)
    if theta.penalty.lam == 0:
        return ll
    return ll - theta.penalty.lam * penalty_value(theta.gamma, theta.penalty)


def e_step_from_joint(joint):
    """Normalise an n x K matrix of log(pi f) into responsibilities."""
    ll = _rowwise_lse(joint)
    W = np.exp(joint - ll[:, None])
    W /= W.sum(axis=1, keepdims=True)
    return W, ll


def as_index_list(ids: Sequence) -> list:
    return [int(i) for i in ids]
