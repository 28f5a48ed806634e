"""Synthetic benchmark: lognormal compositions, planted outliers, scored fits.

Each replicate draws compositions, builds a sparse zero-sum response,
corrupts it (mean shifts, optionally leveraged rows, or swapped labels),
fits every requested method and scores outlier detection and coefficient
error. Replicates use independent RNG streams derived from the base seed
and replicate index, so results do not depend on execution order.
"""

from __future__ import annotations

import csv
import io
import logging
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from joblib import Parallel, delayed

from .composition import ConstraintMatrix, build_design, log_transform, total_sum_normalize
from .psc import robust_init
from .tables import format_number
from .workflow import fit_robust, nonrobust_fit

__all__ = [
    "GROUP_BOUNDS",
    "METHODS",
    "Metrics",
    "ScenarioConfig",
    "ScenarioResult",
    "beta_star",
    "constraint_sim",
    "evaluate",
    "gen_covariates",
    "gen_response",
    "inject_outliers",
    "make_leveraged",
    "replicate_rng",
    "run_replicate",
    "run_scenario",
    "swap_outliers",
]

log = logging.getLogger(__name__)

GROUP_BOUNDS = (0, 10, 16, 20, 23)
METHODS = ("A", "H", "E", "NR")
_BETA_HEAD = [0.5, 1, -0.8, 0.4, 0, 0, -0.6, 0, 0, 0, 0, -1.5, 0, 1.2, 0, 0, 0.3]


def _groups():
    b = GROUP_BOUNDS
    return [list(range(b[r], b[r + 1])) for r in range(len(b) - 1)]


@dataclass(frozen=True)
class ScenarioConfig:
    n: int = 200
    p: int = 100
    O: int = 20
    shift: float = 8.0
    leveraged: bool = False
    snr: float = 3.0
    replicates: int = 20
    seed: int = 0
    mode: str = "shift"
    methods: tuple = METHODS
    n_lambda: int = 40
    folds: int = 10

    def __post_init__(self):
        if self.p < GROUP_BOUNDS[-1]:
            raise ValueError(f"p must be at least {GROUP_BOUNDS[-1]}")
        if not 0 <= self.O <= self.n / 2:
            raise ValueError("O must lie in [0, n/2]")
        if self.shift <= 0:
            raise ValueError("shift must be positive")
        if self.mode not in ("shift", "swap"):
            raise ValueError("mode must be 'shift' or 'swap'")
        bad = set(self.methods) - set(METHODS)
        if bad:
            raise ValueError(f"unknown methods {sorted(bad)}")


@dataclass
class Metrics:
    FN: float = np.nan
    FP1: float = np.nan
    FP2: float = np.nan
    Er: float = np.nan

    @property
    def HM(self):
        return self.FN + self.FP1


def replicate_rng(seed, rep):
    """Independent generator for replicate ``rep``: seed sequence ``(seed, spawn_key=(rep,))``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(rep),)))


def gen_covariates(n, p, rng):
    """Lognormal draws with log-mean ``log(p/2)`` on the first five taxa and AR(1) correlation 0.5."""
    rng = np.random.default_rng(rng)
    mu = np.zeros(p)
    mu[:5] = np.log(p / 2.0)
    idx = np.arange(p)
    sigma = 0.5 ** np.abs(np.subtract.outer(idx, idx))
    L = np.linalg.cholesky(sigma)
    return np.exp(mu + rng.standard_normal((n, p)) @ L.T)


def beta_star(p):
    """True coefficients ``[beta_0, beta_1, ..., beta_p]`` (intercept first)."""
    if p < GROUP_BOUNDS[-1]:
        raise ValueError(f"p must be at least {GROUP_BOUNDS[-1]}")
    beta = np.zeros(p + 1)
    beta[: len(_BETA_HEAD)] = _BETA_HEAD
    return beta


def to_design_order(beta_first):
    """Move the intercept from the front to the back, matching ``[Z, 1]`` designs."""
    beta_first = np.asarray(beta_first, dtype=float)
    return np.concatenate([beta_first[1:], beta_first[:1]])


def constraint_sim(p):
    """Four zero-sum groups on columns 0-9, 10-15, 16-19, 20-22 of a ``[Z, 1]`` design."""
    return ConstraintMatrix.from_groups(_groups(), p + 1)


def gen_response(Z, beta, snr, rng):
    """``y = [1 Z] beta + eps`` with ``sd(eps) = ||[1 Z] beta|| / (sqrt(n) snr)``.

    ``beta`` has the intercept first.
    """
    rng = np.random.default_rng(rng)
    Z = np.asarray(Z, dtype=float)
    n = Z.shape[0]
    mean = beta[0] + Z @ beta[1:]
    sigma = float(np.linalg.norm(mean) / (np.sqrt(n) * snr)) if np.isfinite(snr) else 0.0
    return mean + sigma * rng.standard_normal(n), sigma


def inject_outliers(y, O, shift):
    """Add ``shift`` to the first ``O`` responses."""
    y = np.array(y, dtype=float)
    y[:O] += shift
    return y, np.arange(O)


def swap_outliers(y, O):
    """Exchange the ``O // 2`` largest responses with the ``O // 2`` smallest."""
    y = np.array(y, dtype=float)
    h = O // 2
    if h == 0:
        return y, np.zeros(0, dtype=int)
    order = np.argsort(y, kind="stable")
    lo, hi = order[:h], order[::-1][:h]
    y[lo], y[hi] = y[hi].copy(), y[lo].copy()
    return y, np.sort(np.concatenate([lo, hi]))


def make_leveraged(W, O, groups=None):
    """Replace the first ``O // 2`` rows by leveraged rows, group by group.

    Within each group the first column plus 4 is sorted descending and the
    other columns ascending; the top rows of that rearranged block are
    spliced into ``W``.
    """
    W = np.array(W, dtype=float)
    if O % 2:
        warnings.warn(f"odd O={O}; leveraging {O // 2} rows")
    h = O // 2
    if h == 0:
        return W
    for g in _groups() if groups is None else groups:
        block = W[:, g]
        first = np.sort(block[:, 0] + 4.0)[::-1]
        rest = np.sort(block[:, 1:], axis=0)
        W[:h, g] = np.column_stack([first, rest])[:h]
    return W


def evaluate(detected, true, beta_refit, beta_true, p, refit_outliers=None):
    """Outlier counts and ``Er = 100 ||beta_true - beta_refit|| / p``."""
    det, tru = set(np.asarray(detected).tolist()), set(np.asarray(true).tolist())
    fp2 = np.nan if refit_outliers is None else len(set(np.asarray(refit_outliers).tolist()) - tru)
    er = 100.0 * float(np.linalg.norm(np.asarray(beta_true) - np.asarray(beta_refit))) / p
    return Metrics(len(tru - det), len(det - tru), fp2, er)


def simulate_data(cfg: ScenarioConfig, rep):
    """Corrupted data of one replicate: ``(Z, y, true_outliers, sigma, rng)``."""
    rng = replicate_rng(cfg.seed, rep)
    W = gen_covariates(cfg.n, cfg.p, rng)
    y, sigma = gen_response(log_transform(total_sum_normalize(W)), beta_star(cfg.p), cfg.snr, rng)
    if cfg.leveraged:
        W = make_leveraged(W, cfg.O)
    Z = log_transform(total_sum_normalize(W))
    if cfg.mode == "swap":
        y, true = swap_outliers(y, cfg.O)
    else:
        y, true = inject_outliers(y, cfg.O, cfg.shift * sigma)
    return Z, y, true, sigma, rng


def run_replicate(cfg: ScenarioConfig, rep):
    """Fit and score every method on replicate ``rep``; returns ``{method: Metrics}``."""
    Z, y, true, _, rng = simulate_data(cfg, rep)
    n, p = Z.shape
    design = build_design(Z, np.ones((n, 1)))
    C = constraint_sim(p).rescaled(design.col_scale)
    free = (design.intercept,)
    b_true = to_design_order(beta_star(p))
    seed = int(rng.integers(2 ** 31 - 1))
    out = {}
    init = None
    if any(m in ("A", "H") for m in cfg.methods):
        init = robust_init(y, design.X, C, free=free, seed=seed)
    for m in cfg.methods:
        if m == "NR":
            b_nr, _ = nonrobust_fit(design.X, y, C, free=free, seed=seed)
            out[m] = Metrics(Er=evaluate([], [], design.to_original(b_nr), b_true, p).Er)
            continue
        rf = fit_robust(design.X, y, C, m, free=free, init=init if m != "E" else None, seed=seed,
                        n_lambda=cfg.n_lambda, k=cfg.folds)
        out[m] = evaluate(rf.fit.outliers, true, design.to_original(rf.refit.beta), b_true, p, rf.refit.outliers)
    return out


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    per_replicate: list = field(default_factory=list)

    def mean(self, method):
        rows = [r[method] for r in self.per_replicate]
        return Metrics(*(float(np.mean([getattr(r, f) for r in rows])) for f in ("FN", "FP1", "FP2", "Er")))

    def row(self):
        c = self.config
        vals = [int(c.leveraged), c.p, c.O]
        for m in METHODS:
            if m not in c.methods:
                continue
            mean = self.mean(m)
            vals += [mean.Er] if m == "NR" else [mean.FN, mean.FP1, mean.FP2, mean.Er]
        return vals

    def header(self):
        cols = ["L", "p", "O"]
        for m in METHODS:
            if m in self.config.methods:
                cols += [f"{m}_Er"] if m == "NR" else [f"{m}_{f}" for f in ("FN", "FP1", "FP2", "Er")]
        return cols

    def as_dict(self):
        return {"config": asdict(self.config), "columns": self.header(), "row": self.row()}


def run_scenario(cfg: ScenarioConfig, n_jobs=1):
    """All replicates of one scenario, in replicate order."""
    if n_jobs == 1:
        reps = [run_replicate(cfg, r) for r in range(cfg.replicates)]
    else:
        reps = Parallel(n_jobs=n_jobs)(delayed(run_replicate)(cfg, r) for r in range(cfg.replicates))
    return ScenarioResult(cfg, reps)


def results_csv(results):
    """Table with one row per scenario (scenarios must share the method set)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if results:
        w.writerow(results[0].header())
    for r in results:
        w.writerow([format_number(v) for v in r.row()])
    return buf.getvalue()
