"""End-to-end robust fit: initializer, lambda path, R-CV, final fit and refit."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .composition import ConstraintMatrix
from .penalties import PenaltyKind
from .psc import InitResult, robust_init
from .selection import CVResult, LambdaPath, RobustModel, lambda_grid, robust_cv, select_lambda
from .solver import FitResult, RefitResult, constrained_lstsq, fit_path, refit_inliers, slcm_fit

__all__ = ["RobustFit", "fit_robust", "needs_init", "nonrobust_fit"]


def needs_init(kind):
    return PenaltyKind.parse(kind) in (PenaltyKind.HARD_RIDGE, PenaltyKind.ADAPTIVE)


@dataclass
class RobustFit:
    fit: FitResult
    lam: float
    path: LambdaPath
    path_fits: list
    cv: CVResult | None
    init: InitResult | None
    refit: RefitResult
    model: RobustModel

    @property
    def converged(self):
        return self.fit.converged


def fit_robust(X, y, constraint: ConstraintMatrix | None, kind="A", *, alpha=0.95, free=(), init=None,
               lambdas=None, n_lambda=40, k=10, seed=0, rule="min", n_jobs=1, psc_kw=None, **fit_kw):
    """Robust sparse log-contrast regression with lambda chosen by R-CV.

    Parameters
    ----------
    X, y : ndarray
        Fit-scale design and response.
    constraint : ConstraintMatrix or None
        Constraint on fit-scale coefficients.
    kind : {"H", "E", "A"}
        Penalty; "H" and "A" run the PSC initializer unless ``init`` is given.
    lambdas : array_like, optional
        Decreasing path. Built from the data when omitted.
    rule : {"min", "1se"}

    Returns
    -------
    RobustFit
    """
    kind = PenaltyKind.parse(kind)
    if init is None and needs_init(kind):
        init = robust_init(y, X, constraint, free=free, seed=seed, **(psc_kw or {}))
    model = RobustModel(X, y, constraint, kind, alpha, tuple(free), init)
    path = lambda_grid(model, n_lambda, **fit_kw) if lambdas is None else LambdaPath(lambdas)
    cv = robust_cv(model, path, k=k, seed=seed, n_jobs=n_jobs, **fit_kw) if len(path) > 1 else None
    lam = select_lambda(cv, rule) if cv is not None else float(path.values[0])
    fits = fit_path(model.problem(), path.values, init=model.start(), **fit_kw)
    path.nnz_gamma = np.array([f.outliers.size for f in fits])
    fit = fits[int(np.flatnonzero(path.values == lam)[0])]
    refit = refit_inliers(X, y, constraint, fit, free=free)
    return RobustFit(fit, lam, path, fits, cv, init, refit, model)


def nonrobust_fit(X, y, constraint: ConstraintMatrix | None, *, free=(), seed=0):
    """Sparse log-contrast fit by cross-validation, refit by least squares on its support."""
    res = slcm_fit(X, y, constraint, free=free, seed=seed)
    support = np.union1d(np.flatnonzero(res.beta), np.asarray(free, dtype=int))
    return constrained_lstsq(X, y, constraint, support), res
