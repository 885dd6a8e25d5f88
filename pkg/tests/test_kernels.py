from __future__ import annotations

import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from zazou import _kernels_py, solvers
from zazou._backend import BACKEND
from zazou.design import build_design
from zazou.tree import geometry, random_ultrametric_tree

try:
    from zazou import _kernels as _kernels_c
except ImportError:  # extension not built
    _kernels_c = None

needs_c = pytest.mark.skipif(_kernels_c is None, reason="compiled kernels not built")
BACKENDS = [_kernels_py] + ([_kernels_c] if _kernels_c is not None else [])


def tree_case(m, seed, alpha=1.0, frac=0.1):
    rng = np.random.default_rng(seed)
    tree = random_ultrametric_tree(m, rng)
    z = rng.standard_normal(m)
    z[: max(1, m // 4)] -= 3.0
    des = build_design(tree, geometry(tree), z, alpha)
    lam = frac * float(np.abs(des.X.T @ des.y).max())
    return np.asfortranarray(des.X), np.asfortranarray(des.T), np.array(des.y), lam


def run_shooting(mod, X, T, y, lam, max_sweeps=10_000, trace=None):
    n = X.shape[1]
    delta = np.zeros(n)
    resid = y.copy()
    tdelta = np.zeros(X.shape[0])
    col_sq = np.einsum("ij,ij->j", X, X)
    order = np.arange(n, dtype=np.intp)
    out = mod.shooting_cd(X, T, lam, delta, resid, tdelta, col_sq, order, 1e-10,
                          max_sweeps, 1e-9, trace)
    return delta, resid, tdelta, out


def test_backend_is_reported():
    assert BACKEND in ("cython", "python")
    if _kernels_c is not None:
        assert BACKEND == "cython"


def test_pure_python_switch():
    code = "from zazou._backend import BACKEND; print(BACKEND)"
    env = {"ZAZOU_PURE_PYTHON": "1", "PATH": "/usr/bin:/bin"}
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True,
                         check=True)
    assert out.stdout.strip() == "python"


@pytest.mark.parametrize("mod", BACKENDS, ids=lambda m: m.__name__.rsplit(".", 1)[-1])
def test_shooting_keeps_state_consistent(mod):
    X, T, y, lam = tree_case(20, 1)
    delta, resid, tdelta, (sweeps, conv, pinned) = run_shooting(mod, X, T, y, lam)
    assert sweeps >= 1
    np.testing.assert_allclose(resid, y - X @ delta, atol=1e-10)
    np.testing.assert_allclose(tdelta, T @ delta, atol=1e-10)
    assert tdelta.max() <= 1e-9


@pytest.mark.parametrize("mod", BACKENDS, ids=lambda m: m.__name__.rsplit(".", 1)[-1])
@pytest.mark.parametrize("seed", range(5))
def test_objective_non_increasing_per_sweep(mod, seed):
    X, T, y, lam = tree_case(25, seed, alpha=0.5, frac=0.05)
    trace = np.full(10_000, np.nan)
    _, _, _, (sweeps, _, _) = run_shooting(mod, X, T, y, lam, trace=trace)
    obj = trace[:sweeps]
    start = 0.5 * float(y @ y)
    assert obj[0] <= start + 1e-12
    assert np.all(np.diff(obj) <= 1e-10 * max(1.0, start))


@needs_c
@given(st.integers(2, 40), st.integers(0, 2**32 - 1), st.floats(0.01, 0.9),
       st.floats(0.1, 5.0))
def test_shooting_backends_agree_per_sweep(m, seed, frac, alpha):
    # later sweeps may part ways when rounding flips a boundary decision
    X, T, y, lam = tree_case(m, seed, alpha, frac)
    a = run_shooting(_kernels_py, X, T, y, lam, max_sweeps=1)
    b = run_shooting(_kernels_c, X, T, y, lam, max_sweeps=1)
    assert a[3] == b[3]
    np.testing.assert_allclose(a[0], b[0], atol=1e-9)


@needs_c
@given(st.integers(2, 30), st.integers(0, 2**32 - 1), st.floats(0.01, 0.9),
       st.floats(0.1, 5.0))
def test_solver_objective_independent_of_backend(m, seed, frac, alpha):
    X, T, y, lam = tree_case(m, seed, alpha, frac)
    prob = solvers.ConstrainedLassoProblem(X, y, T, lam)
    objs = []
    for mod in (_kernels_py, _kernels_c):
        with pytest.MonkeyPatch.context() as mp:
            mp.setattr(solvers, "kernels", mod)
            objs.append(solvers.constrained_lasso(prob).objective)
    assert objs[0] == pytest.approx(objs[1], rel=1e-8, abs=1e-8)


@needs_c
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 1.0))
def test_shooting_backends_agree_unconstrained(seed, frac):
    rng = np.random.default_rng(seed)
    X = np.asfortranarray(rng.standard_normal((12, 20)))
    y = rng.standard_normal(12)
    lam = frac * float(np.abs(X.T @ y).max())
    a = run_shooting(_kernels_py, X, None, y, lam, max_sweeps=300)
    b = run_shooting(_kernels_c, X, None, y, lam, max_sweeps=300)
    assert a[3][:2] == b[3][:2]
    np.testing.assert_allclose(a[0], b[0], atol=1e-9)


def quad_case(seed, n=15):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((2 * n, n))
    G = np.ascontiguousarray(A.T @ A / (2 * n))
    c = rng.standard_normal(n)
    return G, c


def run_quad(mod, G, c, gamma, skip=-1):
    beta = np.zeros(G.shape[0])
    grad = np.zeros(G.shape[0])
    sweeps, status = mod.l1_quadratic_cd(G, c, gamma, beta, grad, skip, 1e-12, 10_000)
    return beta, grad, sweeps, status


@pytest.mark.parametrize("mod", BACKENDS, ids=lambda m: m.__name__.rsplit(".", 1)[-1])
def test_quadratic_cd_solves_kkt(mod):
    G, c = quad_case(0)
    gamma = 0.1
    beta, grad, _, status = run_quad(mod, G, c, gamma)
    assert status == 1
    np.testing.assert_allclose(grad, G @ beta, atol=1e-10)
    g = c - G @ beta
    on = beta != 0
    np.testing.assert_allclose(g[on], gamma * np.sign(beta[on]), atol=1e-8)
    assert np.all(np.abs(g[~on]) <= gamma + 1e-8)


@pytest.mark.parametrize("mod", BACKENDS, ids=lambda m: m.__name__.rsplit(".", 1)[-1])
def test_quadratic_cd_skip_and_divergence(mod):
    G, c = quad_case(1)
    beta, _, _, _ = run_quad(mod, G, c, 0.05, skip=3)
    assert beta[3] == 0.0
    # indefinite direction: unbounded below
    G = np.ascontiguousarray(np.array([[1.0, 2.0], [2.0, 1.0]]))
    _, _, _, status = run_quad(mod, G, np.array([1.0, 1.0]), 0.0)
    assert status == -1


@needs_c
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 0.5))
def test_quadratic_backends_agree(seed, gamma):
    G, c = quad_case(seed)
    a = run_quad(_kernels_py, G, c, gamma)
    b = run_quad(_kernels_c, G, c, gamma)
    assert a[2:] == b[2:]
    np.testing.assert_allclose(a[0], b[0], atol=1e-10)
