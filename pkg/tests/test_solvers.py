from __future__ import annotations

import math

import cvxpy as cp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.linear_model import Lasso

from zazou.design import build_design
from zazou.errors import DegenerateFitError
from zazou.solvers import (ConstrainedLassoProblem, SolverOptions, constrained_lasso,
                           default_lambda0, interior_point_lasso, kkt_violation,
                           lasso_objective, scaled_lasso, solve_univariate)
from zazou.tree import geometry, random_ultrametric_tree


def tree_problem(m, seed, frac=None):
    rng = np.random.default_rng(seed)
    t = random_ultrametric_tree(m, rng)
    z = rng.standard_normal(m) + np.where(rng.random(m) < 0.4, -3.0, 0.0)
    des = build_design(t, geometry(t), z, float(rng.uniform(0.3, 5.0)))
    if frac is None:
        frac = float(rng.uniform(0.01, 0.5))
    lam = frac * float(np.abs(des.X.T @ des.y).max())
    return ConstrainedLassoProblem(des.X, des.y, des.T, lam)


def cvx_objective(prob):
    D = cp.Variable(prob.X.shape[1])
    obj = 0.5 * cp.sum_squares(prob.y - prob.X @ D) + prob.lam * cp.norm1(D)
    cons = [prob.T @ D <= 0] if prob.T is not None else []
    pr = cp.Problem(cp.Minimize(obj), cons)
    for tol in (1e-12, 1e-10, 1e-9):
        try:
            pr.solve(solver="CLARABEL", tol_gap_abs=tol, tol_gap_rel=tol, tol_feas=tol)
        except cp.error.SolverError:
            continue
        if pr.status == cp.OPTIMAL:
            return pr.value, D.value
    raise RuntimeError("conic oracle failed")


# -- univariate ---------------------------------------------------------------

def test_univariate_examples():
    x = np.array([1.0, 0.0])
    r = np.array([5.0, 0.0])
    none = np.zeros(2)
    assert solve_univariate(x, r, none, none, 2.0) == pytest.approx(3.0)
    assert solve_univariate(x, np.array([1.0, 0.0]), none, none, 2.0) == 0.0
    # theta_max = 1 from 1 * theta - 1 <= 0
    assert solve_univariate(x, r, np.array([-1.0, 0.0]), np.array([1.0, 0.0]), 2.0) == 1.0
    assert solve_univariate(np.zeros(2), r, none, none, 2.0) is None


def test_univariate_infeasible():
    x = np.array([1.0])
    assert solve_univariate(x, x, np.array([1.0]), np.array([0.0]), 0.1) is None
    u = np.array([1.0, 1.0])
    v = np.array([1.0, -1.0])  # theta <= -1 and theta >= 1
    assert solve_univariate(np.ones(2), np.ones(2), u, v, 0.1) is None


@given(st.integers(0, 2**32 - 1), st.floats(0.0, 3.0))
def test_univariate_matches_grid_search(seed, lam):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(4)
    r = rng.standard_normal(4) * 3
    v = rng.standard_normal(4)
    u = -np.abs(rng.standard_normal(4))  # theta = 0 feasible
    theta = solve_univariate(x, r, u, v, lam)
    pos, neg = v > 0, v < 0
    hi = np.min(-u[pos] / v[pos]) if pos.any() else 50.0
    lo = np.max(-u[neg] / v[neg]) if neg.any() else -50.0
    grid = np.linspace(max(lo, -50), min(hi, 50), 200_001)
    f = 0.5 * ((r[:, None] - x[:, None] * grid) ** 2).sum(0) + lam * np.abs(grid)
    best = grid[np.argmin(f)]
    ftheta = 0.5 * np.sum((r - x * theta) ** 2) + lam * abs(theta)
    assert ftheta <= f.min() + 1e-9
    assert abs(theta - best) <= 2 * (grid[1] - grid[0]) + 1e-9 or ftheta <= f.min() + 1e-12


# -- constrained lasso --------------------------------------------------------

def test_problem_validation():
    with pytest.raises(ValueError):
        ConstrainedLassoProblem(np.ones((3, 2)), np.ones(2), None, 1.0)
    with pytest.raises(ValueError):
        ConstrainedLassoProblem(np.ones((3, 2)), np.ones(3), np.ones((3, 3)), 1.0)
    with pytest.raises(ValueError):
        ConstrainedLassoProblem(np.ones((3, 2)), np.ones(3), None, -1.0)


def test_full_shrinkage():
    prob = tree_problem(10, 1, frac=1.0)
    fit = constrained_lasso(prob)
    np.testing.assert_array_equal(fit.delta, 0.0)
    assert fit.converged


def test_identity_design():
    y = -np.array([1.0, 2.0, 0.5, 3.0])
    fit = constrained_lasso(ConstrainedLassoProblem(np.eye(4), y, np.eye(4), 0.0))
    np.testing.assert_allclose(fit.delta, y)
    # positive responses are clipped to the boundary
    fit = constrained_lasso(ConstrainedLassoProblem(np.eye(4), -y, np.eye(4), 0.0))
    np.testing.assert_allclose(fit.delta, 0.0)


def test_infeasible_init_rejected():
    prob = tree_problem(6, 2)
    with pytest.raises(ValueError, match="infeasible"):
        constrained_lasso(prob, init=np.ones(prob.X.shape[1]))


def test_non_convergence_warns():
    prob = tree_problem(15, 3, frac=0.01)
    with pytest.warns(RuntimeWarning, match="did not converge"):
        fit = constrained_lasso(prob, options=SolverOptions(max_iter=1, escape=False))
    assert not fit.converged and fit.warnings


@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1))
def test_matches_conic_oracle(seed):
    prob = tree_problem(8, seed)
    fit = constrained_lasso(prob)
    ref, _ = cvx_objective(prob)
    assert fit.objective == pytest.approx(ref, abs=1e-6)
    assert fit.objective >= ref - 1e-6
    assert fit.max_violation <= 1e-9
    assert kkt_violation(prob.X, prob.y, prob.T, fit.delta, prob.lam) <= 1e-6
    assert fit.objective == pytest.approx(lasso_objective(prob.X, prob.y, fit.delta, prob.lam))


@settings(max_examples=25)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 0.9))
def test_unconstrained_matches_sklearn(seed, frac):
    rng = np.random.default_rng(seed)
    m, n = 20, 30
    X = rng.standard_normal((m, n))
    y = X[:, :3] @ np.array([2.0, -1.0, 1.5]) + rng.standard_normal(m)
    lam = frac * float(np.abs(X.T @ y).max())
    fit = constrained_lasso(ConstrainedLassoProblem(X, y, None, lam), tol=1e-12)
    ref = Lasso(alpha=lam / m, fit_intercept=False, tol=1e-14, max_iter=1_000_000).fit(X, y)
    assert fit.objective <= lasso_objective(X, y, ref.coef_, lam) + 1e-6
    assert fit.objective == pytest.approx(lasso_objective(X, y, ref.coef_, lam), abs=1e-6)


@settings(max_examples=20)
@given(st.integers(0, 2**32 - 1))
def test_order_invariance(seed):
    prob = tree_problem(10, seed)
    a = constrained_lasso(prob)
    perm = np.random.default_rng(seed).permutation(prob.X.shape[1])
    b = constrained_lasso(prob, order=perm)
    assert b.objective == pytest.approx(a.objective, abs=1e-7)
    # with m > n the solution is unique
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((30, 10))
    y = rng.standard_normal(30)
    up = ConstrainedLassoProblem(X, y, None, 2.0)
    np.testing.assert_allclose(constrained_lasso(up, order=perm[perm < 10]).delta,
                               constrained_lasso(up).delta, atol=1e-7)


def test_warm_start_path_matches_cold():
    prob = tree_problem(12, 7, frac=1.0)
    lam_max = prob.lam
    delta = None
    for f in (0.5, 0.2, 0.1, 0.05, 0.02):
        p = ConstrainedLassoProblem(prob.X, prob.y, prob.T, f * lam_max)
        warm = constrained_lasso(p, init=delta)
        cold = constrained_lasso(p)
        assert warm.objective == pytest.approx(cold.objective, abs=1e-7)
        delta = warm.delta


@settings(max_examples=15)
@given(st.integers(0, 2**32 - 1))
def test_interior_point_matches_oracle(seed):
    prob = tree_problem(8, seed)
    d = interior_point_lasso(prob.X, prob.y, prob.T, prob.lam)
    ref, _ = cvx_objective(prob)
    assert lasso_objective(prob.X, prob.y, d, prob.lam) == pytest.approx(ref, abs=1e-6)
    assert (prob.T @ d).max() <= 1e-8


def test_jittered_cholesky():
    from zazou.solvers import _jittered_cho

    assert _jittered_cho(-np.eye(3)) is None
    M = np.ones((3, 3))  # singular PSD
    c, _ = _jittered_cho(M.copy())
    assert np.isfinite(c).all()


def test_kkt_violation_detects_suboptimal():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((10, 4))
    y = rng.standard_normal(10)
    assert kkt_violation(X, y, None, np.zeros(4), 1e6) == 0.0
    assert kkt_violation(X, y, None, np.zeros(4), 0.0) == pytest.approx(np.abs(X.T @ y).max())


# -- scaled lasso -------------------------------------------------------------

def test_default_lambda0():
    assert default_lambda0(100, 50) == pytest.approx(math.sqrt(2 * math.log(50) / 100))


def test_zero_response_collapses():
    X = np.random.default_rng(0).standard_normal((10, 5))
    with pytest.raises(DegenerateFitError, match="collapsed"):
        scaled_lasso(ConstrainedLassoProblem(X, np.zeros(10), None, 0.0))
    with pytest.raises(ValueError):
        scaled_lasso(ConstrainedLassoProblem(X, np.ones(10), None, 0.0), lambda0=0.0)


def test_noise_band(rng):
    sig = []
    for _ in range(20):
        X = rng.standard_normal((100, 50))
        y = rng.standard_normal(100)
        fit = scaled_lasso(ConstrainedLassoProblem(X, y, None, 0.0))
        sig.append(fit.sigma_hat)
    assert 0.7 <= min(sig) and max(sig) <= 1.3


@settings(max_examples=30)
@given(st.integers(5, 40), st.integers(0, 2**32 - 1))
def test_scaled_fixed_point(m, seed):
    prob = tree_problem(m, seed)
    fit = scaled_lasso(prob)
    m = prob.X.shape[0]
    resid = float(np.linalg.norm(prob.y - prob.X @ fit.delta)) / math.sqrt(m)
    if fit.converged:
        assert abs(fit.sigma_hat - resid) <= 1e-6
    assert fit.lam == pytest.approx(fit.lambda0 * m * fit.sigma_hat, rel=1e-4)
    assert fit.max_violation <= 1e-9
