"""Lambda paths and robust cross-validation (R-CV).

Folds are scored by how far the spread of cleaned, train-scaled test
residuals is from one. A fold whose test residuals are all flagged as
outliers scores ``inf`` and is left out of that lambda's average.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from joblib import Parallel, delayed
from scipy.optimize import linprog
from scipy.stats import median_abs_deviation

from .composition import ConstraintMatrix
from .penalties import PenaltyKind
from .psc import InitResult
from .solver import RegressionProblem, _fold_ids, default_penalty, dual_descent_fit, fit_path

__all__ = [
    "CVResult",
    "LambdaPath",
    "RobustModel",
    "fold_test_statistic",
    "lambda_grid",
    "lambda_max",
    "lambda_max_raw",
    "robust_cv",
    "robust_oos_error",
    "robust_statistic",
    "select_lambda",
    "train_scale",
]

log = logging.getLogger(__name__)

S_TR_FLOOR = 1e-12
MIN_TEST = 5


@dataclass
class RobustModel:
    """Everything needed to build the penalized problem on any subsample.

    The ``kappa`` multipliers and adaptive weights are recomputed for the
    subsample size, and ``init`` is restricted to its rows.
    """

    X: np.ndarray
    y: np.ndarray
    constraint: ConstraintMatrix | None
    kind: PenaltyKind = PenaltyKind.ADAPTIVE
    alpha: float = 0.95
    free: tuple = ()
    init: InitResult | None = None

    def __post_init__(self):
        self.kind = PenaltyKind.parse(self.kind)
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.kind is PenaltyKind.ADAPTIVE and self.init is None:
            raise ValueError("the adaptive penalty needs an initial estimate for its weights")

    @property
    def n(self):
        return self.X.shape[0]

    def problem(self, rows=None):
        rows = np.arange(self.n) if rows is None else np.asarray(rows)
        q = self.X.shape[1]
        w = self.init.adaptive(rows) if self.kind is PenaltyKind.ADAPTIVE else None
        pen = default_penalty(self.kind, rows.size, q, self.alpha, weights=w)
        return RegressionProblem(self.X[rows], self.y[rows], self.constraint, pen, free=self.free)

    def start(self, rows=None):
        rows = np.arange(self.n) if rows is None else np.asarray(rows)
        if self.init is None or self.kind is PenaltyKind.ELASTIC_NET:
            return np.zeros(self.X.shape[1] + rows.size)
        return self.init.start(rows)


@dataclass
class LambdaPath:
    values: np.ndarray
    nnz_gamma: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1 or self.values.size == 0:
            raise ValueError("lambda path must be a nonempty vector")
        if np.any(self.values <= 0) or np.any(np.diff(self.values) >= 0):
            raise ValueError("lambda path must be positive and strictly decreasing")

    def __len__(self):
        return self.values.size


def lambda_max_raw(X, y, weights=1.0):
    """``max |[X'y; y]| / w`` with ``w`` ordered as ``[beta; gamma]``."""
    X = np.array(X, dtype=float, ndmin=2)
    y = np.asarray(y, dtype=float)
    g = np.abs(np.concatenate([X.T @ y, y]))
    w = np.broadcast_to(np.asarray(weights, dtype=float), g.shape)
    with np.errstate(divide="ignore"):
        return float(np.max(np.where(w > 0, g / w, np.inf)))


def _constrained_sup(g, C, scale, free):
    """``min_nu max_j |g_j - (C nu)_j| / scale_j`` with ``g - C nu`` zero on ``free``."""
    q, k = C.shape
    pen = np.setdiff1d(np.arange(q), free)
    A = np.zeros((2 * pen.size, k + 1))
    A[: pen.size, :k], A[pen.size:, :k] = C[pen], -C[pen]
    A[:, k] = -np.concatenate([scale, scale])
    b = np.concatenate([g[pen], -g[pen]])
    res = linprog(np.eye(k + 1)[k], A_ub=A, b_ub=b,
                  A_eq=np.hstack([C[free], np.zeros((len(free), 1))]) if len(free) else None,
                  b_eq=g[free] if len(free) else None,
                  bounds=[(None, None)] * k + [(0, None)], method="highs")
    if res.status != 0:
        raise RuntimeError(f"lambda_max linear program failed: {res.message}")
    return float(res.x[k])


def lambda_max(problem: RegressionProblem):
    """Smallest lambda at which the all-zero penalized fit is optimal (convex kinds).

    Free coefficients are set to their least squares values first. The
    loss gradient there, less the best multiple of the constraint
    directions, is compared with each coordinate's ``alpha * kappa * w``.
    """
    pen = problem.penalty
    if pen.alpha == 0:
        raise ValueError("alpha = 0 has no finite lambda_max")
    n, q = problem.n, problem.q
    r = problem.y
    free = list(problem.free)
    if free:
        XF = problem.X[:, free]
        r = r - XF @ np.linalg.lstsq(XF, r, rcond=None)[0]
    scale = pen.alpha * np.broadcast_to(pen.l1_scale, (problem.n_params,))
    grad = problem.X.T @ r / n
    beta_pen = np.setdiff1d(np.arange(q), free)
    if problem.constraint is None:
        top = float(np.max(np.abs(grad[beta_pen]) / scale[beta_pen], initial=0.0))
    else:
        top = _constrained_sup(grad, problem.constraint.C, scale[beta_pen], free)
    if problem.mean_shift:
        top = max(top, float(np.max(np.abs(r) / np.sqrt(n) / scale[q:])))
    return top


def lambda_grid(model: RobustModel, n_points=40, floor=1e-3, lam_max=None, **fit_kw):
    """Log-spaced path from ``lambda_max`` down to where half the samples get a shift.

    The lower end is found by walking down an ``n_points`` log grid towards
    ``floor * lambda_max`` with warm starts and stopping at the first value
    whose fit has at least ``n / 2`` nonzero shifts.
    """
    if n_points < 2:
        raise ValueError("n_points must be at least 2")
    prob = model.problem()
    lmax = lambda_max(prob) if lam_max is None else float(lam_max)
    search = np.geomspace(lmax, floor * lmax, n_points)
    lmin = search[-1]
    start = model.start()
    hard = prob.penalty.kind is PenaltyKind.HARD_RIDGE

    theta, eta = start, None
    for lam in search[1:]:
        fit = dual_descent_fit(prob, lam, init=start if hard else theta, eta=eta, **fit_kw)
        theta, eta = fit.theta, fit.eta_basis
        if fit.outliers.size >= prob.n / 2:
            lmin = lam
            break
    return LambdaPath(np.geomspace(lmax, lmin, n_points))


def train_scale(beta, gamma, X_tr, y_tr):
    """Root mean square of the training residuals ``y - X beta - gamma``, floored at 1e-12."""
    e = np.asarray(y_tr, dtype=float) - np.asarray(X_tr) @ beta - gamma
    return max(float(np.sqrt(e @ e / e.size)), S_TR_FLOOR)


def robust_statistic(resid_te, s_tr, cutoff=2.0):
    """``|sd(clean r) - 1|`` for test residuals ``r = resid_te / s_tr``.

    Residuals beyond ``cutoff`` times the normal-consistent MAD of ``r``
    are dropped first. Returns ``inf`` when nothing is left.
    """
    resid_te = np.asarray(resid_te, dtype=float)
    if resid_te.size < MIN_TEST:
        raise ValueError(f"the test statistic needs at least {MIN_TEST} test samples")
    r = resid_te / max(float(s_tr), S_TR_FLOOR)
    s_te = median_abs_deviation(r, scale="normal")
    clean = r[np.abs(r) <= cutoff * s_te]
    if clean.size == 0:
        return np.inf
    sd = float(np.std(clean, ddof=1)) if clean.size > 1 else 0.0
    return abs(sd - 1.0)


def fold_test_statistic(beta, gamma, X_tr, y_tr, X_te, y_te, cutoff=2.0):
    """Robust test statistic of one fold.

    Parameters
    ----------
    beta : ndarray
        Coefficients fitted on the training part (fit scale).
    gamma : ndarray
        Training mean shifts in response units.
    X_tr, y_tr, X_te, y_te : ndarray
        Training and test data.
    cutoff : float
        Test residuals beyond ``cutoff`` MAD units are dropped.

    Returns
    -------
    float
        ``inf`` when every test residual is flagged.
    """
    s_tr = train_scale(beta, gamma, X_tr, y_tr)
    return robust_statistic(np.asarray(y_te, dtype=float) - np.asarray(X_te) @ beta, s_tr, cutoff)


@dataclass
class CVResult:
    lambdas: np.ndarray
    per_fold: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    lambda_min: float
    lambda_1se: float
    folds: np.ndarray
    seed: int
    k: int
    excluded: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def index_min(self):
        return int(np.flatnonzero(self.lambdas == self.lambda_min)[0])


def _aggregate(stats):
    finite = np.isfinite(stats)
    cnt = finite.sum(axis=0)
    vals = np.where(finite, stats, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(cnt > 0, vals.sum(axis=0) / np.maximum(cnt, 1), np.inf)
        dev = np.where(finite, stats - mean, 0.0)
        var = np.where(cnt > 1, (dev ** 2).sum(axis=0) / np.maximum(cnt - 1, 1), 0.0)
    se = np.sqrt(var) / np.sqrt(np.maximum(cnt, 1))
    return mean, se, stats.shape[0] - cnt


def _select(lambdas, mean, se):
    """Indices of the min and one-standard-error choices; ties go to larger lambda."""
    i_min = int(np.argmin(mean))  # first occurrence = largest lambda
    ok = np.flatnonzero(mean <= mean[i_min] + se[i_min])
    i_1se = int(ok[np.argmax(lambdas[ok])])
    return i_min, i_1se


def _fold_stats(model, lambdas, tr, te, fit_kw):
    prob = model.problem(tr)
    fits = fit_path(prob, lambdas, init=model.start(tr), **fit_kw)
    X, y = model.X, model.y
    return np.array([fold_test_statistic(f.beta, f.gamma, X[tr], y[tr], X[te], y[te]) for f in fits])


def robust_cv(model: RobustModel, path, k=10, seed=0, n_jobs=1, **fit_kw):
    """k-fold R-CV along a warm-started lambda path.

    Parameters
    ----------
    model : RobustModel
    path : LambdaPath or array_like
    k : int
        Number of folds; every test fold must have at least 5 samples.
    seed : int
        Seed of the fold shuffle.
    n_jobs : int
        Folds run in parallel through joblib when greater than one.

    Returns
    -------
    CVResult
    """
    lambdas = path.values if isinstance(path, LambdaPath) else LambdaPath(path).values
    n = model.n
    if n // k < MIN_TEST:
        raise ValueError(f"{k} folds leave fewer than {MIN_TEST} test samples per fold")
    n_con = model.constraint.k if model.constraint is not None else 0
    if n // k < n_con:
        k_new = max(2, n // n_con)
        warnings.warn(f"reducing folds from {k} to {k_new} so each fold covers the constraints")
        k = k_new
    folds = _fold_ids(n, k, seed)
    jobs = [(np.flatnonzero(folds != f), np.flatnonzero(folds == f)) for f in range(k)]
    if n_jobs == 1:
        rows = [_fold_stats(model, lambdas, tr, te, fit_kw) for tr, te in jobs]
    else:
        rows = Parallel(n_jobs=n_jobs)(delayed(_fold_stats)(model, lambdas, tr, te, fit_kw) for tr, te in jobs)
    stats = np.vstack(rows)
    mean, se, excluded = _aggregate(stats)
    if np.any(excluded):
        warnings.warn(f"{int(excluded.sum())} fold/lambda scores were infinite and left out")
    i_min, i_1se = _select(lambdas, mean, se)
    return CVResult(lambdas, stats, mean, se, float(lambdas[i_min]), float(lambdas[i_1se]), folds, seed,
                    k, excluded)


def select_lambda(cv: CVResult, rule="min"):
    if rule == "min":
        return cv.lambda_min
    if rule == "1se":
        return cv.lambda_1se
    raise ValueError(f"unknown rule {rule!r}")


def robust_oos_error(beta, gamma, X_tr, y_tr, X_hold, y_hold, cutoff=2.0):
    """Out-of-sample version of the fold statistic for a fit on all training data."""
    return fold_test_statistic(beta, gamma, X_tr, y_tr, X_hold, y_hold, cutoff)
