"""Penalties on the stacked parameter vector and their proximity operators.

Three penalties are supported, each mixing a sparsity term with a ridge
term through ``alpha``:

* hard-ridge  ``alpha^2 lam^2 kappa^2 ||t||_0 / 2 + (1 - alpha) lam ||t||^2 / 2``
* elastic net ``alpha lam ||kappa t||_1 + (1 - alpha) lam ||t||^2 / 2``
* adaptive    ``alpha lam ||kappa w t||_1 + (1 - alpha) lam ||t||^2 / 2``

All operators act coordinatewise; ``kappa`` and ``weights`` are vectors
aligned with the parameter vector they are applied to.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "PenaltyKind",
    "PenaltySpec",
    "W_MAX",
    "adaptive_weights",
    "hard_threshold",
    "kappa_scalars",
    "penalty_value",
    "prox",
    "soft_threshold",
]

W_MAX = 1e6


class PenaltyKind(str, enum.Enum):
    HARD_RIDGE = "H"
    ELASTIC_NET = "E"
    ADAPTIVE = "A"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        key = str(value).strip().upper()
        for kind in cls:
            if key in (kind.value, kind.name):
                return kind
        raise ValueError(f"unknown penalty kind {value!r}")


def kappa_scalars(n, p_eff):
    """Multipliers ``sqrt(log(e n))`` and ``sqrt(log(e p))``."""
    if n < 1 or p_eff < 1:
        raise ValueError("n and p_eff must be at least 1")
    return float(np.sqrt(1.0 + np.log(n))), float(np.sqrt(1.0 + np.log(p_eff)))


def soft_threshold(a, lam):
    a = np.asarray(a, dtype=float)
    return np.sign(a) * np.maximum(np.abs(a) - lam, 0.0)


def hard_threshold(a, lam):
    a = np.asarray(a, dtype=float)
    return np.where(np.abs(a) > lam, a, 0.0)


@dataclass(frozen=True)
class PenaltySpec:
    """Penalty kind, mixing weight and per-coordinate multipliers.

    ``kappa`` and ``weights`` may be scalars or arrays broadcastable to the
    parameter vector. Weights are only used by the adaptive penalty.
    """

    kind: PenaltyKind = PenaltyKind.ELASTIC_NET
    alpha: float = 0.95
    kappa: np.ndarray | float = 1.0
    weights: np.ndarray | float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", PenaltyKind.parse(self.kind))
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        kappa = np.asarray(self.kappa, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if np.any(kappa <= 0):
            raise ValueError("kappa entries must be positive")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise ValueError("weights must be finite and nonnegative")
        object.__setattr__(self, "kappa", kappa)
        object.__setattr__(self, "weights", weights)

    @property
    def l1_scale(self):
        """Per-coordinate multiplier of ``alpha * lam`` in the sparsity term."""
        if self.kind is PenaltyKind.ADAPTIVE:
            return self.kappa * self.weights
        return self.kappa

    def take(self, idx):
        """Restrict vector-valued fields to the coordinates ``idx``."""
        def sub(v):
            return v if v.ndim == 0 else v[idx]
        return replace(self, kappa=sub(self.kappa), weights=sub(self.weights))


def prox(spec: PenaltySpec, t, lam, idx=None, step=1.0):
    """Proximity operator of ``step * P_lam``.

    Returns ``argmin_theta 0.5 (t - theta)^2 + step * P_lam(theta)``
    coordinatewise. With ``step=1`` this is the closed form thresholding
    rule of each penalty; other steps are needed by proximal gradient
    iterations. ``idx`` selects which entries of ``kappa``/``weights``
    apply when ``t`` is a scalar or a subvector.
    """
    if lam < 0:
        raise ValueError("lam must be nonnegative")
    t = np.asarray(t, dtype=float)
    if idx is not None:
        spec = spec.take(idx)
    a = spec.alpha
    shrink = 1.0 + step * lam * (1.0 - a)
    if spec.kind is PenaltyKind.HARD_RIDGE:
        # keep iff 0.5 t^2 / shrink >= step * a^2 lam^2 kappa^2 / 2
        cut = a * lam * spec.kappa * np.sqrt(step * shrink)
        return np.where(np.abs(t) >= cut, t / shrink, 0.0)
    return soft_threshold(t, step * a * lam * spec.l1_scale) / shrink


def penalty_value(spec: PenaltySpec, delta, lam, idx=None):
    """Value of ``P_lam(delta)``."""
    delta = np.asarray(delta, dtype=float)
    if idx is not None:
        spec = spec.take(idx)
    a = spec.alpha
    ridge = (1.0 - a) * lam * np.sum(delta ** 2) / 2.0
    if spec.kind is PenaltyKind.HARD_RIDGE:
        l0 = np.broadcast_to(a ** 2 * lam ** 2 * spec.kappa ** 2 / 2.0, delta.shape)
        return float(np.sum(l0[delta != 0]) + ridge)
    l1 = np.broadcast_to(spec.l1_scale, delta.shape)
    return float(a * lam * np.sum(l1 * np.abs(delta)) + ridge)


def adaptive_weights(delta, nu=1.0, w_max=W_MAX):
    """Weights ``|delta|^-nu``, capped at ``w_max`` for (near-)zero entries."""
    mag = np.abs(np.asarray(delta, dtype=float))
    with np.errstate(divide="ignore", over="ignore"):
        w = np.where(mag > 0, mag ** (-nu), np.inf)
    return np.minimum(w, w_max)
