import math
from decimal import Decimal, getcontext

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from logcontrast.penalties import (
    W_MAX,
    PenaltyKind,
    PenaltySpec,
    adaptive_weights,
    hard_threshold,
    kappa_scalars,
    penalty_value,
    prox,
    soft_threshold,
)

from oracles import dense_grid_argmin, grid_min, prox_objective


def _sqrt_one_plus_ln(x):
    getcontext().prec = 40
    return float((Decimal(1) + Decimal(x).ln()).sqrt())


def test_kappa_scalars():
    k1, _ = kappa_scalars(1, 1)
    assert k1 == 1.0
    k1, k2 = kappa_scalars(200, 100)
    assert k1 == pytest.approx(_sqrt_one_plus_ln(200), abs=1e-12)
    assert k2 == pytest.approx(_sqrt_one_plus_ln(100), abs=1e-12)
    assert round(k1, 6) == 2.509645
    assert round(k2, 6) == 2.367524
    with pytest.raises(ValueError):
        kappa_scalars(0, 3)


def test_soft_threshold():
    assert soft_threshold(3, 1) == 2
    assert soft_threshold(-0.5, 1) == 0
    assert soft_threshold(-1.7, 0) == -1.7


def test_hard_threshold():
    assert hard_threshold(0.9, 1) == 0
    assert hard_threshold(1.5, 1) == 1.5
    assert hard_threshold(-2, 1) == -2


def test_prox_reduces_to_soft_threshold():
    spec = PenaltySpec("E", alpha=1.0, kappa=1.0, weights=5.0)
    assert prox(spec, 3.0, 1.0) == pytest.approx(2.0)


def test_prox_reduces_to_hard_threshold():
    spec = PenaltySpec("H", alpha=1.0, kappa=1.0)
    assert prox(spec, 0.9, 1.0) == 0.0
    assert prox(spec, 1.5, 1.0) == 1.5


def test_hard_prox_keeps_at_cutoff():
    spec = PenaltySpec("H", alpha=1.0, kappa=1.0)
    assert prox(spec, 1.0, 1.0) == 1.0


def test_hard_ridge_prox_against_grid():
    spec = PenaltySpec("H", alpha=0.95, kappa=1.0)
    got = float(prox(spec, 4.0, 2.0))
    arg, _ = dense_grid_argmin("H", 4.0, 2.0, 0.95, 1.0, 1.0)
    assert got == pytest.approx(arg, abs=1e-4)


def test_prox_uses_indexed_multipliers():
    spec = PenaltySpec("A", alpha=1.0, kappa=np.array([1.0, 2.0]), weights=np.array([1.0, 0.5]))
    np.testing.assert_allclose(prox(spec, np.array([3.0, 3.0]), 1.0), [2.0, 2.0])
    assert prox(spec, 3.0, 1.0, idx=1) == pytest.approx(2.0)


@pytest.mark.parametrize("kind", ["H", "E", "A"])
def test_prox_with_step(kind):
    spec = PenaltySpec(kind, alpha=0.5, kappa=1.3, weights=0.7)
    t, lam, step = 2.0, 1.0, 0.25
    g = np.arange(-300000, 300001) * 1e-5
    f = 0.5 * (t - g) ** 2 + step * (prox_objective(kind, 0.0, g, lam, 0.5, 1.3, 0.7) - 0.5 * g ** 2)
    assert float(prox(spec, t, lam, step=step)) == pytest.approx(g[np.argmin(f)], abs=1e-4)


def test_penalty_value_examples():
    e = PenaltySpec("E", alpha=1.0, kappa=1.0)
    a = PenaltySpec("A", alpha=1.0, kappa=1.0, weights=np.array([2.0, 1.0]))
    assert penalty_value(e, np.zeros(3), 1.0) == 0.0
    assert penalty_value(e, np.array([2.0, -3.0]), 1.0) == pytest.approx(5.0)
    assert penalty_value(a, np.array([2.0, -3.0]), 1.0) == pytest.approx(7.0)


def test_penalty_value_hard_ridge_counts_nonzeros():
    h = PenaltySpec("H", alpha=0.5, kappa=2.0)
    # 0.25 * 4 * 4 / 2 per nonzero, ridge 0.5 * 2 * (1 + 4) / 2
    assert penalty_value(h, np.array([1.0, 0.0, -2.0]), 2.0) == pytest.approx(2 * 2.0 + 2.5)


def test_spec_validation():
    with pytest.raises(ValueError):
        PenaltySpec("E", alpha=1.5)
    with pytest.raises(ValueError):
        PenaltySpec("E", kappa=0.0)
    with pytest.raises(ValueError):
        PenaltySpec("A", weights=np.array([1.0, np.inf]))
    with pytest.raises(ValueError):
        PenaltyKind.parse("scad")
    assert PenaltyKind.parse("adaptive") is PenaltyKind.ADAPTIVE


def test_adaptive_weights_cap():
    w = adaptive_weights(np.array([0.5, 0.0, 1e-9, -2.0]))
    np.testing.assert_allclose(w, [2.0, W_MAX, W_MAX, 0.5])


kinds = st.sampled_from(["H", "E", "A"])
params = st.tuples(
    kinds,
    st.floats(-10, 10),
    st.floats(0, 5),
    st.sampled_from([0.0, 0.5, 0.95, 1.0]),
    st.floats(0.5, 3),
    st.floats(0.1, 10),
)


@settings(max_examples=300, deadline=None)
@given(params)
def test_prox_is_grid_optimal(args):
    kind, t, lam, alpha, kappa, w = args
    spec = PenaltySpec(kind, alpha, kappa, w)
    got = float(prox(spec, t, lam))
    _, fmin = grid_min(kind, t, lam, alpha, kappa, w)
    assert prox_objective(kind, t, got, lam, alpha, kappa, w) <= fmin + 1e-8


@settings(max_examples=200, deadline=None)
@given(params, st.floats(0, 10))
def test_prox_monotone_and_odd(args, extra):
    kind, t, lam, alpha, kappa, w = args
    spec = PenaltySpec(kind, alpha, kappa, w)
    a, b = abs(t), abs(t) + extra
    assert abs(float(prox(spec, a, lam))) <= abs(float(prox(spec, b, lam))) + 1e-15
    assert float(prox(spec, -t, lam)) == -float(prox(spec, t, lam))


@given(params)
def test_prox_limits(args):
    kind, t, lam, alpha, kappa, w = args
    assert float(prox(PenaltySpec(kind, alpha, kappa, w), t, 0.0)) == pytest.approx(t)
    assert float(prox(PenaltySpec(kind, 0.0, kappa, w), t, lam)) == pytest.approx(t / (1 + lam))


def test_kappa_derivation_is_log_of_e_times_n():
    assert kappa_scalars(50, 50)[0] == pytest.approx(math.sqrt(math.log(math.e * 50)))
