"""Augmented Lagrangian / ISTA solver for the mean-shift log-contrast model.

The estimator minimizes, over coefficients ``beta`` and a mean shift
``gamma`` (stored divided by ``sqrt(n)``),

    (1/2n) ||y - X beta - sqrt(n) gamma||^2 + P_lam([beta; gamma])

subject to ``C' beta = 0``. The constraint is handled by the method of
multipliers on ``beta = P_C theta``; each primal subproblem is a penalized
least squares problem in the stacked variable ``[theta; gamma]`` solved by
proximal gradient (ISTA) iterations.

Parameter vectors are stacked as ``[beta; gamma]`` throughout, which is the
column order of the augmented design.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numba import njit

from .composition import ConstraintMatrix
from .penalties import PenaltyKind, PenaltySpec, kappa_scalars, penalty_value

__all__ = [
    "FitResult",
    "RefitResult",
    "RegressionProblem",
    "SlcmResult",
    "assemble_augmented",
    "constrained_lstsq",
    "default_penalty",
    "dual_descent_fit",
    "fit_path",
    "ista_inner",
    "objective",
    "refit_inliers",
    "slcm_fit",
    "spectral_bound",
]

log = logging.getLogger(__name__)

K0_MARGIN = 1.05
# tight enough that one more ISTA step moves a converged iterate by < 1e-6
INNER_TOL = 1e-7


def assemble_augmented(X, P, C, eta, y):
    """Stacked design and response of one primal subproblem.

    Returns ``Xtil = [[X P, sqrt(n) I], [sqrt(n) C', 0]]`` and
    ``ytil = [y; -sqrt(n) eta]``.
    """
    X = np.asarray(X, dtype=float)
    n, q = X.shape
    C = np.array(C, dtype=float, ndmin=2).reshape(q, -1)
    k = C.shape[1]
    rn = np.sqrt(n)
    Xtil = np.zeros((n + k, q + n))
    Xtil[:n, :q] = X @ P
    Xtil[:n, q:] = rn * np.eye(n)
    Xtil[n:, :q] = rn * C.T
    ytil = np.concatenate([np.asarray(y, dtype=float), -rn * np.asarray(eta, dtype=float).reshape(k)])
    return Xtil, ytil


def _power_iteration(G, rtol=1e-6, max_iter=10000):
    # absolute row sums: deterministic and equivariant under permutations
    v = np.abs(G).sum(axis=1)
    if not np.any(v):
        return 0.0
    v = v / np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = G @ v
        lam_new = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        v = w / nw
        if abs(lam_new - lam) <= rtol * abs(lam_new):
            return lam_new
        lam = lam_new
    return lam


def spectral_bound(Xtil, rtol=1e-6, gram=False):
    """Step constant ``k0 = 1.05 * lambda_max(Xtil' Xtil)``.

    The largest eigenvalue is found by power iteration from a fixed start.
    Pass ``gram=True`` when ``Xtil`` already is the Gram matrix.
    """
    A = np.asarray(Xtil, dtype=float)
    G = A if gram else A.T @ A
    lam = _power_iteration(G, rtol)
    if lam <= 0:
        raise ValueError("augmented design is zero")
    return K0_MARGIN * lam


@njit(cache=True)
def _ista_kernel(M, c, thr, inv, hard, theta0, tol, max_iter):
    # M is symmetric, so row j of M is column j: only nonzero coordinates
    # of theta contribute to M @ theta.
    m = theta0.size
    theta = theta0.copy()
    new = np.empty(m)
    v = np.empty(m)
    for it in range(1, max_iter + 1):
        v[:] = c
        for j in range(m):
            tj = theta[j]
            if tj != 0.0:
                row = M[j]
                for i in range(m):
                    v[i] += tj * row[i]
        diff2 = 0.0
        norm2 = 0.0
        for i in range(m):
            x = v[i]
            if hard:
                val = x * inv[i] if abs(x) >= thr[i] else 0.0
            else:
                r = abs(x) - thr[i]
                val = math.copysign(r * inv[i], x) if r > 0.0 else 0.0
            d = val - theta[i]
            diff2 += d * d
            norm2 += val * val
            new[i] = val
        theta, new = new, theta
        if not math.isfinite(diff2):
            return theta, it, -1
        if math.sqrt(diff2) <= tol * max(math.sqrt(norm2), 1.0):
            return theta, it, 1
    return theta, max_iter, 0


def _ista(G, b, k0, prox_arrays, start, tol, max_iter, M=None):
    """Iterate ``theta <- prox(theta + (b - G theta) / k0)``; returns (theta, iters, converged)."""
    M = np.eye(G.shape[0]) - G / k0 if M is None else M
    thr, inv, hard = prox_arrays
    theta, j, flag = _ista_kernel(np.ascontiguousarray(M), b / k0, thr, inv, hard,
                                  np.ascontiguousarray(start, dtype=float), float(tol), int(max_iter))
    if flag < 0:
        raise FloatingPointError(f"non-finite ISTA iterate at iteration {j}")
    return theta, j, flag == 1


def _make_prox(penalty, lam, step, m, penalized):
    """Threshold and shrink arrays equal to ``prox(penalty, ., lam, step=step)``.

    Unpenalized coordinates get a zero threshold and no shrinkage.
    """
    pen = penalty.take(penalized)
    a = pen.alpha
    shrink = np.ones(m)
    shrink[penalized] = 1.0 + step * lam * (1.0 - a)
    thr = np.zeros(m)
    hard = pen.kind is PenaltyKind.HARD_RIDGE
    if hard:
        thr[penalized] = a * lam * np.broadcast_to(pen.kappa, penalized.shape) * np.sqrt(step * shrink[penalized])
    else:
        thr[penalized] = step * a * lam * np.broadcast_to(pen.l1_scale, penalized.shape)
    return thr, 1.0 / shrink, hard


def ista_inner(Xtil, ytil, spec, lam, k0, start, tol=1e-6, max_iter=1000, n=None, penalized=None):
    """Proximal gradient iterations for ``(1/2n)||ytil - Xtil t||^2 + P_lam(t)``.

    Each step is ``t <- prox[Xtil'ytil / k0 + (I - Xtil'Xtil / k0) t]`` with
    the prox taken at step ``n / k0`` so the fixed points are stationary
    points of the stated objective. ``n`` defaults to ``Xtil.shape[0]``.

    Returns
    -------
    theta : ndarray
    n_iter : int
    converged : bool
    """
    Xtil = np.array(Xtil, dtype=float, ndmin=2)
    ytil = np.atleast_1d(np.asarray(ytil, dtype=float))
    n = Xtil.shape[0] if n is None else n
    m = Xtil.shape[1]
    penalized = np.arange(m) if penalized is None else np.asarray(penalized)
    G = Xtil.T @ Xtil
    b = Xtil.T @ ytil
    return _ista(G, b, k0, _make_prox(spec, lam, n / k0, m, penalized), start, tol, max_iter)


def default_penalty(kind, n, q, alpha=0.95, weights=None, mean_shift=True):
    """Penalty with multipliers ``sqrt(log(e q))`` on beta and ``sqrt(log(e n))`` on gamma."""
    k1, k2 = kappa_scalars(n, q)
    kappa = np.concatenate([np.full(q, k2), np.full(n if mean_shift else 0, k1)])
    w = 1.0 if weights is None else np.asarray(weights, dtype=float)
    return PenaltySpec(kind, alpha, kappa, w)


@dataclass
class RegressionProblem:
    """Design, response, constraint and penalty of one fit.

    ``free`` lists coefficient indices excluded from the penalty (the
    intercept). The penalty's vector fields are aligned with ``[beta; gamma]``
    (or ``beta`` alone when ``mean_shift`` is false).
    """

    X: np.ndarray
    y: np.ndarray
    constraint: ConstraintMatrix | None
    penalty: PenaltySpec
    mean_shift: bool = True
    free: tuple = ()

    def __post_init__(self):
        self.X = np.array(self.X, dtype=float, ndmin=2)
        self.y = np.asarray(self.y, dtype=float).ravel()
        if self.X.shape[0] != self.y.size:
            raise ValueError("X and y have different numbers of rows")
        if self.constraint is not None and self.constraint.C.shape[0] != self.q:
            raise ValueError("constraint rows must match design columns")
        self.free = tuple(int(j) for j in self.free)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def q(self):
        return self.X.shape[1]

    @property
    def n_params(self):
        return self.q + (self.n if self.mean_shift else 0)

    @cached_property
    def penalized(self):
        mask = np.ones(self.n_params, dtype=bool)
        mask[list(self.free)] = False
        return np.flatnonzero(mask)

    def subset(self, rows, penalty=None):
        """Problem restricted to the given samples (gamma entries follow)."""
        rows = np.asarray(rows)
        pen = self.penalty if penalty is None else penalty
        if penalty is None and self.mean_shift:
            keep = np.concatenate([np.arange(self.q), self.q + rows])
            pen = pen.take(keep)
        return RegressionProblem(self.X[rows], self.y[rows], self.constraint, pen, self.mean_shift, self.free)

    @cached_property
    def workspace(self):
        return _Workspace(self)


class _Workspace:
    """Quantities fixed for a problem across lambda and dual updates.

    The constraint enters through an orthonormal basis ``Q`` of its range,
    scaled by ``sqrt(mu)`` with ``mu`` matching the largest curvature of the
    data block. ``X P Q = 0``, so the scaling leaves ``k0`` unchanged while
    making the multiplier updates contract quickly.
    """

    def __init__(self, prob: RegressionProblem):
        n, q = prob.n, prob.q
        if prob.constraint is None:
            Q = np.zeros((q, 0))
            P = np.eye(q)
        else:
            Q = prob.constraint.basis
            P = prob.constraint.proj_comp
        A = prob.X @ P
        AtA = A.T @ A
        lam_a = _power_iteration(AtA) if np.any(AtA) else 0.0
        self.mu = max(1.0, lam_a / n)
        Qs = np.sqrt(self.mu) * Q
        self.Q, self.P = Qs, P
        cols = q + (n if prob.mean_shift else 0)
        rn = np.sqrt(n)
        G = np.zeros((cols, cols))
        G[:q, :q] = AtA + n * (Qs @ Qs.T)
        if prob.mean_shift:
            G[:q, q:] = rn * A.T
            G[q:, :q] = rn * A
            G[q:, q:] = n * np.eye(n)
        self.G = G
        self.b0 = np.concatenate([A.T @ prob.y, rn * prob.y if prob.mean_shift else np.zeros(0)])
        self.k0 = spectral_bound(G, gram=True)
        self.M = np.eye(cols) - G / self.k0
        self.penalized = prob.penalized
        self.rhs_dual = -n * Qs  # d(b)/d(eta) for the beta block


def objective(problem: RegressionProblem, beta, gamma, lam):
    """Penalized objective at ``beta`` (fit scale) and ``gamma`` (response units)."""
    n = problem.n
    beta = np.asarray(beta, dtype=float)
    r = problem.y - problem.X @ beta
    params = beta
    if problem.mean_shift:
        gamma = np.asarray(gamma, dtype=float)
        r = r - gamma
        params = np.concatenate([beta, gamma / np.sqrt(n)])
    value = r @ r / (2.0 * n)
    if lam > 0:
        idx = problem.penalized
        value += penalty_value(problem.penalty, params[idx], lam, idx=idx)
    return float(value)


@dataclass
class FitResult:
    """Outcome of one penalized fit at a fixed ``lam``.

    ``beta`` is on the design's fit scale; ``gamma`` is in response units.
    ``theta`` and ``eta_basis`` hold the raw solver state for warm starts.
    """

    beta: np.ndarray
    gamma: np.ndarray
    eta: np.ndarray
    lam: float
    obj_trace: list
    inner_iters: int
    outer_iters: int
    converged: bool
    theta: np.ndarray = field(repr=False)
    eta_basis: np.ndarray = field(repr=False)
    zero_fit: bool = False
    feasibility: float = 0.0
    beta_original: np.ndarray | None = None

    @property
    def objective(self):
        return self.obj_trace[-1] if self.obj_trace else np.nan

    @property
    def outliers(self):
        return np.flatnonzero(self.gamma != 0)

    @property
    def support(self):
        return np.flatnonzero(self.beta != 0)


def dual_descent_fit(problem: RegressionProblem, lam, init=None, eta=None, *, tol_inner=INNER_TOL,
                     max_inner=1000, tol_feas=1e-6, max_outer=200, restart=False):
    """Method of multipliers with an ISTA primal solver.

    Parameters
    ----------
    problem : RegressionProblem
    lam : float
        Tuning parameter.
    init : ndarray, optional
        Starting ``[beta; gamma / sqrt(n)]`` on the fit scale.
    eta : ndarray, optional
        Starting multipliers in the orthonormal constraint basis.
    restart : bool
        Start every primal solve from ``init`` instead of the previous
        iterate. Only the first solve does so by default.

    Returns
    -------
    FitResult
        Non-convergence is reported through ``converged``, not raised.
    """
    ws = problem.workspace
    n, q = problem.n, problem.q
    m = problem.n_params
    start = np.zeros(m) if init is None else np.array(init, dtype=float)
    if start.shape != (m,):
        raise ValueError(f"init must have length {m}")
    k = ws.Q.shape[1]
    eta_b = np.zeros(k) if eta is None else np.array(eta, dtype=float)
    prox_fn = _make_prox(problem.penalty, lam, n / ws.k0, m, ws.penalized)
    C = problem.constraint.C if problem.constraint is not None else np.zeros((q, 0))

    theta = start
    trace, total_inner, converged, feas = [], 0, False, 0.0
    for it in range(1, max_outer + 1):
        b = ws.b0.copy()
        b[:q] += ws.rhs_dual @ eta_b
        theta, nin, ok = _ista(ws.G, b, ws.k0, prox_fn, start if restart else theta, tol_inner, max_inner, ws.M)
        total_inner += nin
        eta_b = eta_b + ws.Q.T @ theta[:q]
        beta = _feasible_part(theta[:q], C)
        gamma = np.sqrt(n) * theta[q:] if problem.mean_shift else np.zeros(n)
        trace.append(objective(problem, beta, gamma, lam))
        feas = float(np.max(np.abs(C.T @ theta[:q]))) if k else 0.0
        if ok and feas <= tol_feas:
            converged = True
            break
    if not converged:
        log.warning("dual descent did not converge at lam=%.4g (feasibility %.2e)", lam, feas)
    eta_c = np.linalg.lstsq(C, ws.Q @ eta_b, rcond=None)[0] if k else eta_b
    zero = not np.any(np.delete(beta, list(problem.free))) and not np.any(gamma)
    return FitResult(beta, gamma, eta_c, float(lam), trace, total_inner, it, converged, theta, eta_b,
                     zero_fit=zero, feasibility=feas)


def _feasible_part(theta, C):
    """Orthogonal projection of ``theta`` onto ``{C'b = 0}`` within its support."""
    beta = np.zeros_like(theta)
    S = np.flatnonzero(theta)
    if S.size == 0:
        return beta
    if C.shape[1] == 0:
        beta[S] = theta[S]
        return beta
    B = _null_basis(C[S])
    beta[S] = B @ (B.T @ theta[S])
    return beta


def fit_path(problem: RegressionProblem, lambdas, init=None, **kw):
    """Fits along a decreasing lambda sequence with warm starts.

    Convex penalties start each fit from the previous solution; the
    hard-ridge penalty restarts from ``init`` but keeps the multipliers.
    """
    fits = []
    theta, eta = init, None
    hard = problem.penalty.kind is PenaltyKind.HARD_RIDGE
    for lam in lambdas:
        fit = dual_descent_fit(problem, lam, init=init if hard else theta, eta=eta, **kw)
        theta, eta = fit.theta, fit.eta_basis
        fits.append(fit)
    return fits


def _null_basis(C_sub, rtol=1e-10):
    m = C_sub.shape[0]
    C_sub = C_sub[:, np.any(C_sub != 0, axis=0)]
    if C_sub.shape[1] == 0:
        return np.eye(m)
    U, s, _ = np.linalg.svd(C_sub, full_matrices=True)
    rank = int(np.sum(s > rtol * s[0]))
    return U[:, rank:]


def constrained_lstsq(X, y, constraint=None, support=None):
    """Least squares subject to ``C' beta = 0`` with ``beta`` zero off ``support``.

    Uses a null-space parameterization and returns the minimum-norm solution
    when the restricted problem is rank deficient.
    """
    X = np.array(X, dtype=float, ndmin=2)
    y = np.asarray(y, dtype=float)
    q = X.shape[1]
    S = np.arange(q) if support is None else np.asarray(sorted(set(int(j) for j in support)), dtype=int)
    beta = np.zeros(q)
    if S.size == 0:
        return beta
    C = np.zeros((q, 0)) if constraint is None else constraint.C
    B = _null_basis(C[S])
    if B.shape[1] == 0:
        return beta
    z = np.linalg.lstsq(X[:, S] @ B, y, rcond=None)[0]
    beta[S] = B @ z
    return beta


def _fold_ids(n, k, seed):
    perm = np.random.default_rng(seed).permutation(n)
    ids = np.empty(n, dtype=int)
    for f, block in enumerate(np.array_split(perm, k)):
        ids[block] = f
    return ids


@dataclass
class SlcmResult:
    beta: np.ndarray
    lam: float
    lambdas: np.ndarray
    cv_mse: np.ndarray | None = None


def _slcm_problem(X, y, constraint, free):
    q = X.shape[1]
    return RegressionProblem(X, y, constraint, PenaltySpec(PenaltyKind.ELASTIC_NET, 1.0, np.ones(q)),
                             mean_shift=False, free=free)


def slcm_lambda_max(X, y, free=()):
    n = X.shape[0]
    r = y - y.mean() if free else y
    g = np.abs(X.T @ r) / n
    g[list(free)] = 0.0
    return float(g.max())


def slcm_fit(X, y, constraint=None, lambdas=None, *, free=(), n_lambda=20, n_folds=5, seed=0,
             lam=None, init=None, **kw):
    """Sparse log-contrast fit: constrained lasso without mean shift.

    When ``lam`` is given the fit is done at that value only. Otherwise a
    ``n_lambda`` point log grid down to ``1e-3`` of the largest useful
    value is scored by ``n_folds``-fold cross-validated squared error and
    the minimizer is refit on all samples.
    """
    X = np.array(X, dtype=float, ndmin=2)
    y = np.asarray(y, dtype=float)
    prob = _slcm_problem(X, y, constraint, free)
    if lam is not None:
        fit = dual_descent_fit(prob, lam, init=init, **kw)
        return SlcmResult(fit.beta, float(lam), np.array([lam]))
    if lambdas is None:
        lmax = slcm_lambda_max(X, y, free)
        lambdas = np.geomspace(lmax, 1e-3 * lmax, n_lambda) if lmax > 0 else np.zeros(1)
    lambdas = np.asarray(lambdas, dtype=float)
    n = X.shape[0]
    if len(lambdas) == 1:
        fit = dual_descent_fit(prob, lambdas[0], init=init, **kw)
        return SlcmResult(fit.beta, float(lambdas[0]), lambdas)
    folds = _fold_ids(n, n_folds, seed)
    mse = np.zeros((n_folds, len(lambdas)))
    for f in range(n_folds):
        tr, te = folds != f, folds == f
        sub = _slcm_problem(X[tr], y[tr], constraint, free)
        for j, fit in enumerate(fit_path(sub, lambdas, **kw)):
            r = y[te] - X[te] @ fit.beta
            mse[f, j] = r @ r / max(r.size, 1)
    mean = mse.mean(axis=0)
    best = int(np.flatnonzero(mean == mean.min())[0])
    path = fit_path(prob, lambdas[: best + 1], **kw)
    return SlcmResult(path[-1].beta, float(lambdas[best]), lambdas, mean)


@dataclass
class RefitResult:
    beta: np.ndarray
    inliers: np.ndarray
    outliers: np.ndarray
    first_stage_beta: np.ndarray
    resid_sd: float


def refit_inliers(X, y, constraint, fit: FitResult, *, free=(), n_sd=3.0):
    """Two-stage estimator on the support of ``fit``.

    Refits unpenalized constrained least squares on the samples with zero
    mean shift, flags every sample whose residual exceeds ``n_sd`` residual
    standard deviations, and refits on the remaining inliers.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    support = sorted(set(fit.support.tolist()) | set(free))
    inl = np.flatnonzero(fit.gamma == 0)
    if inl.size == 0:
        inl = np.arange(y.size)
    b1 = constrained_lstsq(X[inl], y[inl], constraint, support)
    res = y - X @ b1
    sd = float(np.std(res[inl], ddof=1)) if inl.size > 1 else 0.0
    out = np.flatnonzero(np.abs(res) > n_sd * sd)
    final_in = np.setdiff1d(np.arange(y.size), out)
    beta = constrained_lstsq(X[final_in], y[final_in], constraint, support)
    return RefitResult(beta, final_in, out, b1, sd)
