"""Preprocessing of compositional covariates.

Raw read counts are turned into a normalized regression design in four
steps: zero replacement, closure (total-sum normalization), a log or clr
transform, and column centering/scaling. Linear equality constraints on
the compositional coefficients are represented by :class:`ConstraintMatrix`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "CompositionalDataset",
    "ConstraintMatrix",
    "Design",
    "build_constraint",
    "build_design",
    "clr_transform",
    "log_transform",
    "projector_complement",
    "replace_zeros",
    "total_sum_normalize",
]

RANK_RTOL = 1e-10


def replace_zeros(counts, pseudo=0.5):
    """Replace zero counts by a constant pseudo-count.

    Parameters
    ----------
    counts : array_like, shape (n, p)
        Nonnegative counts.
    pseudo : float
        Positive value substituted for every zero entry.

    Returns
    -------
    ndarray, shape (n, p)
    """
    counts = np.array(counts, dtype=float, ndmin=2)
    if pseudo <= 0:
        raise ValueError("pseudo-count must be positive")
    if np.any(counts < 0) or not np.all(np.isfinite(counts)):
        raise ValueError("counts must be finite and nonnegative")
    empty = np.flatnonzero(~np.any(counts > 0, axis=1))
    if empty.size:
        raise ValueError(f"all-zero row {empty[0]}")
    return np.where(counts == 0, pseudo, counts)


def total_sum_normalize(counts):
    """Divide every row by its total so that rows sum to one."""
    counts = np.array(counts, dtype=float, ndmin=2)
    if not np.all(counts > 0):
        raise ValueError("total-sum normalization needs strictly positive entries")
    return counts / counts.sum(axis=1, keepdims=True)


def _check_positive(comp):
    comp = np.array(comp, dtype=float, ndmin=2)
    if not np.all(comp > 0):
        raise ValueError("log transforms need strictly positive entries")
    return comp


def log_transform(compositions):
    """Elementwise natural log."""
    return np.log(_check_positive(compositions))


def clr_transform(compositions):
    """Centered log-ratio: log minus the row mean of logs."""
    z = np.log(_check_positive(compositions))
    return z - z.mean(axis=1, keepdims=True)


def projector_complement(C, rtol=RANK_RTOL):
    """Orthogonal projector onto the null space of ``C'``.

    Computed from the SVD of ``C`` rather than the normal equations.

    Raises
    ------
    ValueError
        If ``C`` is rank deficient relative to ``rtol * sigma_max``.
    """
    Q = _orthonormal_range(C, rtol)
    return np.eye(Q.shape[0]) - Q @ Q.T


def _orthonormal_range(C, rtol=RANK_RTOL):
    C = np.array(C, dtype=float, ndmin=2)
    if C.shape[1] == 0:
        return np.zeros((C.shape[0], 0))
    U, s, _ = np.linalg.svd(C, full_matrices=False)
    if s[0] == 0 or s[-1] <= rtol * s[0]:
        raise ValueError("constraint matrix is rank deficient")
    return U


@dataclass(frozen=True)
class ConstraintMatrix:
    """Linear equality constraint ``C' beta = 0`` on a coefficient vector.

    ``C`` has one row per design column and one column per constraint.
    """

    C: np.ndarray
    groups: tuple = ()
    basis: np.ndarray = field(init=False, repr=False)
    proj_comp: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        C = np.array(self.C, dtype=float, ndmin=2)
        if C.ndim != 2:
            raise ValueError("C must be two dimensional")
        Q = _orthonormal_range(C)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "basis", Q)
        object.__setattr__(self, "proj_comp", np.eye(C.shape[0]) - Q @ Q.T)

    @classmethod
    def from_groups(cls, groups: Sequence[Sequence[int]], n_cols: int):
        """Zero-sum constraint within each of the disjoint column groups."""
        groups = tuple(tuple(int(j) for j in g) for g in groups)
        seen = set()
        C = np.zeros((n_cols, len(groups)))
        for r, g in enumerate(groups):
            if not g:
                raise ValueError(f"group {r} is empty")
            if seen.intersection(g):
                raise ValueError("constraint groups must be disjoint")
            seen.update(g)
            C[list(g), r] = 1.0
        return cls(C, groups)

    @property
    def k(self):
        return self.C.shape[1]

    def rescaled(self, col_scale):
        """Constraint expressed for coefficients of a column-scaled design.

        If ``X[:, j] = raw[:, j] / col_scale[j]`` then the raw-scale
        coefficient is ``beta_fit[j] / col_scale[j]``, so the constraint
        on ``beta_fit`` has rows divided by ``col_scale``.
        """
        col_scale = np.asarray(col_scale, dtype=float)
        return ConstraintMatrix(self.C / col_scale[:, None], self.groups)

    def residual(self, beta):
        return self.C.T @ np.asarray(beta, dtype=float)


def build_constraint(group_sizes, m=0):
    """Block zero-sum constraint over consecutive column groups.

    ``group_sizes`` partitions the ``p`` compositional columns, which come
    first; the ``m`` trailing non-compositional columns are unconstrained.
    """
    sizes = [int(s) for s in group_sizes]
    if not sizes or any(s < 1 for s in sizes):
        raise ValueError("group sizes must be positive and partition p")
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    groups = [range(bounds[r], bounds[r + 1]) for r in range(len(sizes))]
    return ConstraintMatrix.from_groups(groups, int(bounds[-1]) + int(m))


@dataclass(frozen=True)
class Design:
    """Normalized design ``X = [(raw - center) / col_scale]`` with ``raw = [Z N]``.

    Every column of ``X`` has Euclidean norm ``sqrt(n)``. When an all-ones
    intercept column is present it is left untouched and all other columns
    are centered, so the intercept absorbs the column means.
    """

    X: np.ndarray
    center: np.ndarray
    col_scale: np.ndarray
    intercept: int | None
    n_comp: int

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def q(self):
        return self.X.shape[1]

    def transform(self, raw):
        raw = np.array(raw, dtype=float, ndmin=2)
        return (raw - self.center) / self.col_scale

    def to_original(self, beta_fit):
        """Coefficients on the raw ``[Z N]`` scale."""
        beta = np.asarray(beta_fit, dtype=float) / self.col_scale
        if self.intercept is not None:
            beta = beta.copy()
            beta[self.intercept] -= self.center @ beta
        return beta

    def to_fit(self, beta_orig):
        beta = np.array(beta_orig, dtype=float)
        if self.intercept is not None:
            beta[self.intercept] += self.center @ beta
        return beta * self.col_scale


def _find_intercept(N):
    for j in range(N.shape[1]):
        if np.all(N[:, j] == 1.0):
            return j
    return None


def build_design(Z, N=None, center=True):
    """Assemble ``X = [Z N]`` with columns scaled to norm ``sqrt(n)``.

    Parameters
    ----------
    Z : array_like, shape (n, p)
        Log-transformed compositions.
    N : array_like, shape (n, m), optional
        Non-compositional covariates. An all-ones column is the intercept.
    center : bool
        Center the non-intercept columns when an intercept is present.

    Returns
    -------
    Design
    """
    Z = np.array(Z, dtype=float, ndmin=2)
    n, p = Z.shape
    if N is None:
        N = np.zeros((n, 0))
    N = np.array(N, dtype=float, ndmin=2)
    if N.shape[0] != n:
        if N.size == 0:
            N = np.zeros((n, 0))
        else:
            raise ValueError(f"Z has {n} rows but N has {N.shape[0]}")
    raw = np.hstack([Z, N])
    j0 = _find_intercept(N)
    intercept = None if j0 is None else p + j0
    shift = np.zeros(raw.shape[1])
    if intercept is not None and center:
        shift = raw.mean(axis=0)
        shift[intercept] = 0.0
    centered = raw - shift
    norms = np.linalg.norm(centered, axis=0)
    bad = np.flatnonzero(norms <= 1e-12 * max(1.0, np.abs(raw).max()))
    if bad.size:
        raise ValueError(f"column {bad[0]} has zero norm after centering")
    scale = norms / np.sqrt(n)
    if intercept is not None:
        scale[intercept] = 1.0
    return Design(centered / scale, shift, scale, intercept, p)


@dataclass
class CompositionalDataset:
    """Container for one regression data set with compositional covariates."""

    compositions: np.ndarray
    y: np.ndarray
    N: np.ndarray | None = None
    counts: np.ndarray | None = None
    clr: bool = False
    sample_ids: list | None = None
    comp_names: list | None = None
    cov_names: list | None = None

    @classmethod
    def from_counts(cls, counts, y, N=None, pseudo=0.5, **kw):
        counts = np.array(counts, dtype=float, ndmin=2)
        comp = total_sum_normalize(replace_zeros(counts, pseudo))
        return cls(comp, np.asarray(y, dtype=float), N, counts, **kw)

    @property
    def Z(self):
        return clr_transform(self.compositions) if self.clr else log_transform(self.compositions)

    def design(self, center=True):
        return build_design(self.Z, self.N, center=center)
