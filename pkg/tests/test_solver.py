import numpy as np
import pytest
from scipy.optimize import brentq

from logcontrast.composition import ConstraintMatrix, build_design
from logcontrast.penalties import PenaltySpec
from logcontrast.psc import robust_init
from logcontrast.selection import RobustModel, lambda_max
from logcontrast.simulate import beta_star, to_design_order
from logcontrast.solver import (
    RegressionProblem,
    assemble_augmented,
    constrained_lstsq,
    default_penalty,
    dual_descent_fit,
    fit_path,
    ista_inner,
    objective,
    refit_inliers,
    slcm_fit,
    spectral_bound,
)
from logcontrast.workflow import fit_robust

from conftest import sim_problem
from oracles import one_ista_step

R2 = np.sqrt(2.0)


def test_assemble_augmented_hand_example():
    X = R2 * np.eye(2)
    C = np.ones((2, 1))
    P = np.array([[0.5, -0.5], [-0.5, 0.5]])
    Xt, yt = assemble_augmented(X, P, C, np.array([0.3]), np.array([1.0, 2.0]))
    expected = np.array([
        [R2 / 2, -R2 / 2, R2, 0],
        [-R2 / 2, R2 / 2, 0, R2],
        [R2, R2, 0, 0],
    ])
    np.testing.assert_allclose(Xt, expected, atol=1e-15)
    np.testing.assert_allclose(yt, [1.0, 2.0, -R2 * 0.3])


def test_assemble_augmented_shapes():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((5, 3))
    C = np.ones((3, 1))
    Xt, yt = assemble_augmented(X, np.eye(3), C, np.zeros(1), rng.standard_normal(5))
    assert Xt.shape == (6, 8)
    assert yt[-1] == 0


def test_spectral_bound_examples():
    assert spectral_bound(np.eye(3)) == pytest.approx(1.05)
    assert spectral_bound(np.diag([2.0, 1.0])) == pytest.approx(4.2, rel=1e-6)


def test_spectral_bound_matches_eigensolver():
    A = np.random.default_rng(1).standard_normal((10, 6))
    top = np.linalg.eigvalsh(A.T @ A)[-1]
    assert spectral_bound(A) / 1.05 == pytest.approx(top, rel=1e-5)


def test_ista_scalar_lasso():
    spec = PenaltySpec("E", alpha=1.0, kappa=1.0)
    theta, _, ok = ista_inner(np.array([[1.0]]), np.array([3.0]), spec, 1.0, 1.0, np.zeros(1))
    assert ok
    assert theta[0] == pytest.approx(2.0)


def test_ista_unpenalized_limit_is_least_squares():
    rng = np.random.default_rng(2)
    Xt = rng.standard_normal((12, 5))
    yt = rng.standard_normal(12)
    k0 = spectral_bound(Xt)
    spec = PenaltySpec("E", alpha=0.95, kappa=1.0)
    theta, _, _ = ista_inner(Xt, yt, spec, 0.0, k0, np.zeros(5), tol=1e-12, max_iter=100000)
    assert np.max(np.abs(Xt.T @ (yt - Xt @ theta))) < 1e-5


def test_ista_start_at_fixed_point():
    rng = np.random.default_rng(3)
    Xt = rng.standard_normal((10, 4))
    yt = rng.standard_normal(10)
    k0 = spectral_bound(Xt)
    spec = PenaltySpec("E", alpha=1.0, kappa=1.0)
    theta, _, _ = ista_inner(Xt, yt, spec, 0.1, k0, np.zeros(4), tol=1e-14, max_iter=100000)
    again, iters, ok = ista_inner(Xt, yt, spec, 0.1, k0, theta)
    assert ok and iters <= 1
    np.testing.assert_allclose(again, theta, atol=1e-12)


def _noiseless():
    d, C, _, _, _ = sim_problem(n=60, p=30, O=0)
    b = d.to_fit(to_design_order(beta_star(30)))
    return d, C, d.X @ b, b


def test_noiseless_recovery():
    d, C, y, b = _noiseless()
    init = robust_init(y, d.X, C, free=(d.intercept,))
    model = RobustModel(d.X, y, C, "A", 0.95, (d.intercept,), init)
    fit = dual_descent_fit(model.problem(), 1e-5, init=model.start(), tol_inner=1e-10, max_inner=100000)
    assert fit.converged
    np.testing.assert_allclose(d.to_original(fit.beta), d.to_original(b), atol=1e-3)
    assert not np.any(fit.gamma)


def _fit_cases():
    d, C, y, _, _ = sim_problem(seed=5)
    free = (d.intercept,)
    init = robust_init(y, d.X, C, free=free, seed=5)
    for kind in "HEA":
        model = RobustModel(d.X, y, C, kind, 0.95, free, init)
        prob = model.problem()
        lmax = lambda_max(prob) if kind != "H" else lambda_max(RobustModel(d.X, y, C, "E", 0.95, free).problem())
        yield kind, model, prob, lmax


@pytest.fixture(scope="module")
def fit_cases():
    return list(_fit_cases())


def test_fits_are_feasible(fit_cases):
    for kind, model, prob, lmax in fit_cases:
        for fit in fit_path(prob, lmax * np.geomspace(1, 0.01, 6), init=model.start()):
            assert fit.converged, (kind, fit.lam)
            assert np.max(np.abs(prob.constraint.C.T @ fit.beta)) <= 1e-6


def test_convex_trace_monotone_and_fixed_point(fit_cases):
    for kind, model, prob, lmax in fit_cases:
        if kind == "H":
            continue
        for frac in (0.5, 0.1, 0.02):
            fit = dual_descent_fit(prob, frac * lmax, init=model.start())
            assert np.all(np.diff(fit.obj_trace) <= 1e-8)
            assert np.linalg.norm(one_ista_step(prob, fit) - fit.theta) < 1e-6


def test_hard_ridge_improves_on_start(fit_cases):
    kind, model, prob, lmax = fit_cases[0]
    assert kind == "H"
    init = model.init
    for frac in (0.3, 0.1, 0.03):
        fit = dual_descent_fit(prob, frac * lmax, init=model.start())
        assert fit.objective <= objective(prob, init.beta, init.gamma, frac * lmax) + 1e-12


def test_matches_long_run_reference():
    rng = np.random.default_rng(7)
    n, p = 8, 4
    d = build_design(rng.standard_normal((n, p)), np.ones((n, 1)))
    C = ConstraintMatrix.from_groups([range(p)], p + 1).rescaled(d.col_scale)
    y = d.X @ np.array([1.0, -1.0, 0.0, 0.0, 0.3]) + 0.2 * rng.standard_normal(n)
    y[2] += 3.0
    prob = RegressionProblem(d.X, y, C, default_penalty("E", n, p + 1), free=(p,))
    lam = 0.1
    fit = dual_descent_fit(prob, lam)
    ref = dual_descent_fit(prob, lam, tol_inner=1e-12, max_inner=10 ** 6, tol_feas=1e-12, max_outer=1000)
    assert ref.converged
    assert fit.objective == pytest.approx(ref.objective, abs=1e-6)


def test_zero_fit_for_huge_lambda():
    d, C, y, _, _ = sim_problem(n=40, p=30, O=0)
    prob = RegressionProblem(d.X, y, C, default_penalty("E", 40, 31), free=(d.intercept,))
    fit = dual_descent_fit(prob, 10 * lambda_max(prob))
    assert fit.zero_fit and fit.converged
    assert not np.any(fit.gamma)
    assert np.flatnonzero(fit.beta).tolist() == [d.intercept]


def test_nonconvergence_is_reported():
    d, C, y, _, _ = sim_problem(n=40, p=30)
    prob = RegressionProblem(d.X, y, C, default_penalty("E", 40, 31), free=(d.intercept,))
    fit = dual_descent_fit(prob, 0.01, max_inner=2, max_outer=2)
    assert not fit.converged
    assert fit.outer_iters == 2


def test_permutation_equivariance():
    rng = np.random.default_rng(11)
    n, p = 40, 8
    Z = rng.standard_normal((n, p))
    y = Z[:, 0] - Z[:, 3] + 0.3 * rng.standard_normal(n)
    y[:3] += 4
    perm = rng.permutation(p)
    betas = []
    for cols in (np.arange(p), perm):
        d = build_design(Z[:, cols], np.ones((n, 1)))
        pos = {c: j for j, c in enumerate(cols)}
        groups = [[pos[c] for c in range(4)], [pos[c] for c in range(4, 8)]]
        C = ConstraintMatrix.from_groups(groups, p + 1).rescaled(d.col_scale)
        prob = RegressionProblem(d.X, y, C, default_penalty("E", n, p + 1), free=(p,))
        beta = dual_descent_fit(prob, 0.05).beta
        betas.append(np.concatenate([beta[[pos[c] for c in range(p)]], beta[p:]]))
    np.testing.assert_allclose(betas[0], betas[1], atol=1e-10, rtol=0)


def test_objective_examples():
    rng = np.random.default_rng(4)
    X = rng.standard_normal((6, 3))
    y = rng.standard_normal(6)
    prob = RegressionProblem(X, y, None, default_penalty("A", 6, 3, weights=rng.uniform(0.5, 2, 9)))
    assert objective(prob, np.zeros(3), np.zeros(6), 0.7) == pytest.approx(y @ y / 12)
    b = rng.standard_normal(3)
    assert objective(prob, b, y - X @ b, 0.0) == pytest.approx(0.0, abs=1e-15)
    g = rng.standard_normal(6)
    pen = prob.penalty
    delta = np.concatenate([b, g / np.sqrt(6)])
    mult = pen.kappa * pen.weights
    by_hand = np.sum((y - X @ b - g) ** 2) / 12 + 0.95 * 0.7 * np.sum(mult * np.abs(delta)) \
        + 0.05 * 0.7 * np.sum(delta ** 2) / 2
    assert objective(prob, b, g, 0.7) == pytest.approx(by_hand)


def test_slcm_zero_lambda_is_constrained_least_squares():
    d, C, y, _, _ = sim_problem(n=60, p=30, O=0)
    free = (d.intercept,)
    got = slcm_fit(d.X, y, C, free=free, lam=0.0, tol_inner=1e-12, max_inner=10 ** 5).beta
    want = constrained_lstsq(d.X, y, C)
    np.testing.assert_allclose(got, want, atol=1e-6)


def test_slcm_orthogonal_design_projected_soft_threshold():
    rng = np.random.default_rng(5)
    n = 6
    Q, _ = np.linalg.qr(rng.standard_normal((n, 3)))
    X = np.sqrt(n) * Q
    y = X @ np.array([1.5, -1.0, -0.5]) + 0.2 * rng.standard_normal(n)
    lam = 0.3
    z = X.T @ y / n

    def total(nu):
        v = z - nu
        return np.sum(np.sign(v) * np.maximum(np.abs(v) - lam, 0))

    nu = brentq(total, z.min() - lam - 1, z.max() + lam + 1, xtol=1e-14)
    v = z - nu
    want = np.sign(v) * np.maximum(np.abs(v) - lam, 0)
    C = ConstraintMatrix(np.ones((3, 1)))
    got = slcm_fit(X, y, C, lam=lam, tol_inner=1e-12, max_inner=10 ** 5).beta
    np.testing.assert_allclose(got, want, atol=1e-6)
    assert abs(got.sum()) < 1e-6


def test_slcm_cross_validated_fit_is_feasible_and_deterministic():
    d, C, y, _, _ = sim_problem(n=60, p=30, O=0)
    a = slcm_fit(d.X, y, C, free=(d.intercept,), seed=3)
    b = slcm_fit(d.X, y, C, free=(d.intercept,), seed=3)
    np.testing.assert_array_equal(a.beta, b.beta)
    assert np.max(np.abs(C.C.T @ a.beta)) < 1e-6
    assert a.lam in a.lambdas


def test_refit_without_detected_outliers_uses_all_samples():
    d, C, y, _, _ = sim_problem(n=60, p=30, O=0)
    prob = RegressionProblem(d.X, y, C, default_penalty("E", 60, 31), free=(d.intercept,))
    fit = dual_descent_fit(prob, 0.7 * lambda_max(prob))
    assert fit.outliers.size == 0 and fit.support.size > 1
    ref = refit_inliers(d.X, y, C, fit, free=(d.intercept,))
    support = sorted(set(fit.support) | {d.intercept})
    np.testing.assert_allclose(ref.first_stage_beta, constrained_lstsq(d.X, y, C, support))
    assert np.max(np.abs(C.C.T @ ref.beta)) < 1e-8


def test_refit_keeps_planted_outliers():
    d, C, y, true, _ = sim_problem(n=80, p=30, O=8, seed=2)
    rf = fit_robust(d.X, y, C, "A", free=(d.intercept,), seed=2, n_lambda=20)
    assert set(true) <= set(rf.refit.outliers)
    assert set(rf.refit.outliers).isdisjoint(rf.refit.inliers)
