"""Robust starting values from principal sensitivity components (PSC).

Outlying samples are located by how strongly deleting them would move the
fitted values of a sparse log-contrast fit. The eigenvectors of the
sensitivity matrix point at groups of such samples; trimming the extremes
of each eigenvector yields candidate clean subsamples, and the candidate
whose fit has the smallest robust residual scale on all samples wins.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import median_abs_deviation

from .composition import ConstraintMatrix
from .penalties import adaptive_weights
from .solver import _null_basis, constrained_lstsq, slcm_fit

__all__ = [
    "InitResult",
    "PscState",
    "candidate_subsamples",
    "leverage",
    "m_scale",
    "psc_analysis",
    "psc_components",
    "robust_init",
    "sensitivity_matrix",
]

log = logging.getLogger(__name__)

MAX_COMPONENTS = 25
EIG_RTOL = 1e-10
PERFECT_LEVERAGE = 1e-8


def _range_basis(A, rtol=1e-10):
    A = np.array(A, dtype=float, ndmin=2)
    if A.size == 0:
        return np.zeros((A.shape[0], 0))
    U, s, _ = np.linalg.svd(A, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return np.zeros((A.shape[0], 0))
    return U[:, s > rtol * s[0]]


def leverage(Zsub):
    """Diagonal of the orthogonal projector onto the columns of ``Zsub``.

    Rank is decided by SVD, so entries always sum to the numerical rank.
    """
    U = _range_basis(Zsub)
    return np.einsum("ij,ij->i", U, U)


def sensitivity_matrix(residuals, H):
    """``R = H W^2 H`` with ``W = diag(e / (1 - diag(H)))``.

    Samples with leverage within ``1e-8`` of one get zero weight.
    """
    e = np.asarray(residuals, dtype=float)
    H = np.asarray(H, dtype=float)
    h = np.diag(H)
    bad = h >= 1.0 - PERFECT_LEVERAGE
    if np.any(bad):
        log.warning("dropping %d samples with leverage ~1 from the sensitivity matrix", int(bad.sum()))
    w = np.where(bad, 0.0, e / np.where(bad, 1.0, 1.0 - h))
    HW = H * w  # H @ diag(w)
    R = HW @ HW.T
    return (R + R.T) / 2.0


def psc_components(R, max_components=MAX_COMPONENTS):
    """Eigenvectors of ``R`` with non-negligible eigenvalue, largest first.

    Each vector is signed so its largest-magnitude entry is positive.
    Returns an array with one component per column.
    """
    R = np.asarray(R, dtype=float)
    vals, vecs = np.linalg.eigh(R)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    if vals.size == 0 or vals[0] <= 0:
        return np.zeros((R.shape[0], 0))
    keep = vals > EIG_RTOL * vals[0]
    U = vecs[:, keep][:, :max_components]
    pivot = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[pivot, np.arange(U.shape[1])])
    return U * signs


def candidate_subsamples(u, m, n_active=None):
    """Positions kept after dropping the ``m`` largest, smallest and largest-|.| entries of ``u``.

    Ties go to the lowest position. Returns three sorted index arrays into ``u``.
    """
    u = np.asarray(u, dtype=float)
    n = u.size if n_active is None else int(n_active)
    if n != u.size:
        raise ValueError("component length differs from the active set size")
    m = int(m)
    if not 0 <= m < n:
        raise ValueError("m must lie in [0, n_active)")
    idx = np.arange(n)
    out = []
    for key in (-u, u, -np.abs(u)):
        drop = np.lexsort((idx, key))[:m]
        out.append(np.setdiff1d(idx, drop))
    return out


def m_scale(residuals):
    """Normal-consistent MAD, ``1.4826 * median(|r - median(r)|)``."""
    r = np.asarray(residuals, dtype=float)
    return float(median_abs_deviation(r, scale="normal"))


@dataclass
class PscState:
    active: np.ndarray
    scale: float
    beta: np.ndarray
    residuals: np.ndarray
    lam: float = 0.0


def _support_projector(X, C, support):
    """Projector onto ``{X b : C'b = 0, b zero off support}``."""
    B = _null_basis(C[support]) if C.shape[1] else np.eye(len(support))
    return _range_basis(X[:, support] @ B)


def psc_analysis(y, X, active, tau=0.25, C1=2.0, constraint: ConstraintMatrix | None = None, *,
                 free=(), seed=0, lam=None, max_components=MAX_COMPONENTS):
    """One refinement step of the PSC procedure.

    Parameters
    ----------
    y, X : ndarray
        Full response and fit-scale design.
    active : array_like of int
        Current active (presumed clean) samples.
    tau : float
        Fraction of the active set dropped by each candidate.
    C1 : float
        Clean set cutoff in robust scale units.
    lam : float, optional
        Penalty for the active-set fit. Chosen by cross-validation if omitted;
        candidate fits always reuse the active-set value.

    Returns
    -------
    PscState
        New clean set, its scale and the winning coefficients.
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    q = X.shape[1]
    active = np.asarray(active, dtype=int)
    C = constraint.C if constraint is not None else np.zeros((q, 0))
    XA, yA = X[active], y[active]

    base = slcm_fit(XA, yA, constraint, free=free, seed=seed, lam=lam)
    lam = base.lam
    beta_bar = base.beta
    support = np.union1d(np.flatnonzero(beta_bar), np.asarray(free, dtype=int))
    if support.size == len(free):
        log.warning("active-set fit is empty; using the unpenalized constrained fit")
        beta_ls = constrained_lstsq(XA, yA, constraint)
        support = np.flatnonzero(np.abs(beta_ls) > 1e-12 * max(1.0, np.abs(beta_ls).max()))
        if support.size == 0:
            support = np.arange(q)
    U = _support_projector(XA, C, support)
    H = U @ U.T
    R = sensitivity_matrix(yA - XA @ beta_bar, H)
    comps = psc_components(R, max_components)

    m = int(np.floor(active.size * tau))
    best_beta = beta_bar
    best_scale = m_scale(y - X @ beta_bar)
    seen = {tuple(active)}
    for j in range(comps.shape[1]):
        for keep in candidate_subsamples(comps[:, j], m):
            rows = active[keep]
            key = tuple(rows)
            if key in seen:
                continue
            seen.add(key)
            fit = slcm_fit(X[rows], y[rows], constraint, free=free, lam=lam, init=beta_bar)
            s = m_scale(y - X @ fit.beta)
            if s < best_scale:
                best_scale, best_beta = s, fit.beta
    resid = y - X @ best_beta
    clean = np.flatnonzero(np.abs(resid) < C1 * best_scale)
    return PscState(clean, best_scale, best_beta, resid, lam)


@dataclass
class InitResult:
    """Robust starting point on the fit scale.

    ``gamma`` is in response units (full-sample residuals of ``beta``).
    """

    beta: np.ndarray
    gamma: np.ndarray
    weights: np.ndarray
    active: np.ndarray
    scales: list = field(default_factory=list)
    n_iter: int = 0
    converged: bool = True

    @property
    def n(self):
        return self.gamma.size

    def start(self, rows=None):
        """Stacked ``[beta; gamma / sqrt(n_rows)]`` for the chosen samples."""
        g = self.gamma if rows is None else self.gamma[np.asarray(rows)]
        return np.concatenate([self.beta, g / np.sqrt(g.size)])

    def adaptive(self, rows=None, nu=1.0):
        return adaptive_weights(self.start(rows), nu)


def robust_init(y, X, constraint: ConstraintMatrix | None = None, *, free=(), tau=0.25, C1=2.0,
                alpha1=0.9, tol=1e-4, max_iter=20, seed=0, nu=1.0):
    """Iterated PSC analysis from a leverage-trimmed start.

    The starting active set drops samples whose leverage in the constrained
    design exceeds its ``alpha1`` quantile. PSC refinement repeats until
    the robust scale changes by at most ``tol`` or ``max_iter`` steps.

    Returns
    -------
    InitResult
        ``beta`` from a sparse log-contrast fit on the final clean set,
        ``gamma = y - X beta`` and adaptive weights ``|delta|^-nu``.
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    n, q = X.shape
    if not 0 < tau < 0.5:
        raise ValueError("tau must lie in (0, 0.5)")
    P = constraint.proj_comp if constraint is not None else np.eye(q)
    h = leverage(X @ P)
    k = max(1, int(np.floor(n * alpha1)))
    cut = np.sort(h)[k - 1]
    active = np.flatnonzero(h <= cut)

    scales, prev, converged = [], None, False
    min_rows = max(5, len(free) + 2)
    it = 0
    for it in range(1, max_iter + 1):
        state = psc_analysis(y, X, active, tau, C1, constraint, free=free, seed=seed)
        scales.append(state.scale)
        if state.active.size >= min_rows:
            active = state.active
        if prev is not None and abs(state.scale - prev) <= tol:
            converged = True
            break
        prev = state.scale
    final = slcm_fit(X[active], y[active], constraint, free=free, seed=seed)
    beta = final.beta
    gamma = y - X @ beta
    res = InitResult(beta, gamma, np.empty(0), active, scales, it, converged)
    res.weights = res.adaptive(nu=nu)
    return res
