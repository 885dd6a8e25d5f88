"""Debiased shift estimates and leaf-level one-sided p-values.

Both constructions are stored the same way: an observation-space score
vector ``q_j`` and a scalar ``den_j`` so that the correction reads
``delta_j += <q_j, y - X delta> / den_j`` and the covariance is
``sigma^2 <q_i, q_j> / (den_i den_j)``.

* score system: ``q_j = s_j``, the residual of a lasso of ``x_j`` on the
  other columns, and ``den_j = <s_j, x_j>``;
* column-wise inverse: ``q_j = X s_j / m`` where ``s_j`` approximately
  inverts ``Sigma_hat = X'X / m`` in column ``j``, and ``den_j = 1``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.special import ndtr, ndtri

from ._backend import kernels
from .solvers import ShiftFit

__all__ = [
    "ScoreSystem",
    "DebiasedFit",
    "score_system_ss",
    "score_system_ci",
    "ci_feasibility_gap",
    "debias",
    "confidence_intervals",
]

FLAG_RTOL = 1e-8


@dataclass(frozen=True, eq=False)
class ScoreSystem:
    """Decorrelating score vectors for every coordinate.

    Attributes
    ----------
    method : {"ss", "ci"}
    vectors : ndarray
        Native score vectors as columns: residuals ``s_j`` (``m x n``) for
        "ss", approximate inverse columns (``n x n``) for "ci".
    Q : ndarray, shape (m, n)
        Observation-space score vectors.
    den : ndarray, shape (n,)
        ``<s_j, x_j>`` for "ss", ones for "ci".
    flagged : ndarray of bool, shape (n,)
        Coordinates whose score is (numerically) orthogonal to ``x_j``.
    gamma : float or None
        Slack actually used ("ci").
    gamma_requested : float or None
    lambda_node : ndarray or None
        Nodewise penalties in ``1/(2m)`` units ("ss").
    """

    method: str
    vectors: np.ndarray
    Q: np.ndarray
    den: np.ndarray
    flagged: np.ndarray
    gamma: float | None = None
    gamma_requested: float | None = None
    lambda_node: np.ndarray | None = None
    warnings: tuple = field(default=())


def _flag(Q, X, den):
    xx = np.einsum("ij,ij->j", X, X)
    inner = np.einsum("ij,ij->j", Q, X)
    return (xx <= 0) | ~(inner > FLAG_RTOL * xx) | ~np.isfinite(den)


def score_system_ss(X, lambda_node=None, tol: float = 1e-10,
                    max_sweeps: int = 100_000) -> ScoreSystem:
    """Nodewise-lasso residuals.

    Parameters
    ----------
    X : ndarray, shape (m, n)
    lambda_node : float or array_like, optional
        Penalty of the regression of ``x_j`` on ``X_{-j}``, in the
        ``(1/2m) ||.||^2`` normalization.  Defaults to
        ``sqrt(2 log n / m) * ||x_j|| / sqrt(m)``.
    """
    X = np.asarray(X, dtype=float)
    m, n = X.shape
    norms = np.linalg.norm(X, axis=0)
    if lambda_node is None:
        rate = math.sqrt(2.0 * math.log(max(n, 2)) / m)
        lam = rate * norms / math.sqrt(m)
    else:
        lam = np.broadcast_to(np.asarray(lambda_node, dtype=float), (n,)).copy()
        if np.any(lam < 0):
            raise ValueError("lambda_node must be non-negative")
    G = np.ascontiguousarray(X.T @ X)
    B = np.zeros((n, n))
    warns = []
    diverged = np.zeros(n, dtype=bool)
    for j in range(n):
        beta = np.zeros(n)
        grad = np.zeros(n)
        c = np.ascontiguousarray(G[:, j])
        _, status = kernels.l1_quadratic_cd(G, c, float(m * lam[j]), beta, grad, j, tol,
                                            max_sweeps)
        if status == -1:
            diverged[j] = True
            beta[:] = 0.0
        elif status == 0:
            warns.append(f"nodewise lasso for column {j} did not converge")
        B[:, j] = beta
    S = X - X @ B
    den = np.einsum("ij,ij->j", S, X)
    flagged = _flag(S, X, den) | diverged
    if flagged.any():
        warns.append(f"{int(flagged.sum())} coordinate(s) cannot be debiased")
    return ScoreSystem(method="ss", vectors=S, Q=S, den=den, flagged=flagged,
                       lambda_node=lam, warnings=tuple(warns))


def ci_feasibility_gap(Sigma_hat) -> np.ndarray:
    """Smallest ``gamma`` making ``||Sigma_hat s - e_j||_inf <= gamma`` feasible, per ``j``.

    Zero when ``Sigma_hat`` is numerically non-singular; otherwise one
    small linear program per column.
    """
    S = np.asarray(Sigma_hat, dtype=float)
    n = S.shape[0]
    ev = np.linalg.eigvalsh(S)
    if ev[0] > 1e-10 * max(ev[-1], 1e-300):
        return np.zeros(n)
    out = np.empty(n)
    # variables (s, t): minimize t with -t <= S s - e_j <= t
    c = np.zeros(n + 1)
    c[-1] = 1.0
    A = np.block([[S, -np.ones((n, 1))], [-S, -np.ones((n, 1))]])
    bounds = [(None, None)] * n + [(0, None)]
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        res = linprog(c, A_ub=A, b_ub=np.concatenate([e, -e]), bounds=bounds, method="highs")
        out[j] = res.fun if res.status == 0 else 1.0
    return out


def score_system_ci(X, gamma: float | None = None, tol: float = 1e-10,
                    max_sweeps: int = 100_000, max_doublings: int = 40) -> ScoreSystem:
    """Column-wise approximate inverse of ``Sigma_hat = X'X / m``.

    Each ``s_j`` minimizes ``0.5 s' Sigma_hat s - s_j + gamma ||s||_1``,
    whose optimality conditions give ``||Sigma_hat s - e_j||_inf <= gamma``.
    ``gamma`` (default 0.05) is doubled until every column problem is
    bounded; the value used is reported.
    """
    X = np.asarray(X, dtype=float)
    m, n = X.shape
    g_req = 0.05 if gamma is None else float(gamma)
    if g_req < 0:
        raise ValueError("gamma must be non-negative")
    Sh = np.ascontiguousarray(X.T @ X / m)
    need = float(ci_feasibility_gap(Sh).max())
    g = g_req
    doublings = 0
    while need > 0 and not g > need * (1.0 + 1e-6):
        g = 2.0 * g if g > 0 else need
        doublings += 1
    warns = []
    for _ in range(max_doublings):
        B = np.zeros((n, n))
        ok = True
        for j in range(n):
            beta = np.zeros(n)
            grad = np.zeros(n)
            e = np.zeros(n)
            e[j] = 1.0
            _, status = kernels.l1_quadratic_cd(Sh, e, g, beta, grad, -1, tol, max_sweeps)
            if status != 1:
                ok = False
                break
            B[:, j] = beta
        if ok:
            break
        g *= 2.0
        doublings += 1
    else:
        raise ArithmeticError("column-wise inverse did not converge for any gamma tried")
    if g != g_req:
        warns.append(f"gamma raised from {g_req:.6g} to {g:.6g} for feasibility")
    Q = X @ B / m
    den = np.ones(n)
    flagged = _flag(Q, X, den)
    if flagged.any():
        warns.append(f"{int(flagged.sum())} coordinate(s) cannot be debiased")
    return ScoreSystem(method="ci", vectors=B, Q=Q, den=den, flagged=flagged, gamma=g,
                       gamma_requested=g_req, warnings=tuple(warns))


@dataclass(frozen=True, eq=False)
class DebiasedFit:
    """Debiased shifts with their covariance and leaf tests.

    Attributes
    ----------
    delta : ndarray, shape (n,)
        Debiased estimate (``nan`` on flagged coordinates).
    V : ndarray, shape (n, n)
    sigma_hat : float
    flagged : ndarray of bool, shape (n,)
    T : ndarray or None
    mu_hat : ndarray, shape (m,) or None
        ``T delta``.
    leaf_sd : ndarray or None
        ``sqrt(t_i' V t_i)``.
    t_scores, p_ss : ndarray or None
        ``mu_hat / leaf_sd`` and its lower-tail normal probability.
    """

    delta: np.ndarray
    V: np.ndarray
    sigma_hat: float
    flagged: np.ndarray
    method: str
    T: np.ndarray | None = None
    mu_hat: np.ndarray | None = None
    leaf_sd: np.ndarray | None = None
    t_scores: np.ndarray | None = None
    p_ss: np.ndarray | None = None


def debias(fit: ShiftFit, ss: ScoreSystem, X, y, T=None, sigma_hat: float | None = None
           ) -> DebiasedFit:
    """One-step bias correction of a scaled-lasso fit.

    Parameters
    ----------
    fit : ShiftFit
        Initial estimate; its ``sigma_hat`` scales the covariance unless
        ``sigma_hat`` is given.
    ss : ScoreSystem
        Built on the same ``X``.
    X, y : ndarray
    T : ndarray, optional
        Leaf design; when given, leaf t-scores and ``p_ss`` are computed.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    sig = fit.sigma_hat if sigma_hat is None else float(sigma_hat)
    if sig is None:
        raise ValueError("a noise scale is required (use a scaled-lasso fit)")
    flagged = ss.flagged.copy()
    r = y - X @ fit.delta
    den = np.where(flagged, np.nan, ss.den)
    delta = fit.delta + (ss.Q.T @ r) / den
    V = sig * sig * (ss.Q.T @ ss.Q) / np.outer(den, den)
    V = 0.5 * (V + V.T)
    if T is None:
        return DebiasedFit(delta=delta, V=V, sigma_hat=sig, flagged=flagged, method=ss.method)
    T = np.asarray(T, dtype=float)
    mu, sd, t, p = leaf_tests(T, delta, V)
    return DebiasedFit(delta=delta, V=V, sigma_hat=sig, flagged=flagged, method=ss.method,
                       T=T, mu_hat=mu, leaf_sd=sd, t_scores=t, p_ss=p)


def leaf_tests(T, delta, V):
    """Leaf means, standard deviations, t-scores and lower-tail p-values.

    A leaf whose row touches a flagged coordinate or whose variance is not
    positive gets ``nan``.
    """
    m = T.shape[0]
    bad = np.isnan(delta)
    d = np.where(bad, 0.0, delta)
    Vc = np.where(bad[:, None] | bad[None, :], 0.0, V)
    mu = T @ d
    var = np.einsum("ij,jk,ik->i", T, Vc, T)
    touched = (T[:, bad] != 0).any(axis=1) if bad.any() else np.zeros(m, dtype=bool)
    ok = (var > 0) & ~touched
    mu = np.where(touched, np.nan, mu)
    sd = np.where(ok, np.sqrt(np.where(ok, var, 1.0)), np.nan)
    with np.errstate(invalid="ignore"):
        t = np.where(ok, mu / sd, np.nan)
    p = np.clip(ndtr(t), np.finfo(float).tiny, np.nextafter(1.0, 0.0))
    if not ok.all():
        warnings.warn(f"{int((~ok).sum())} leaf test(s) undefined", RuntimeWarning, stacklevel=3)
    return mu, sd, t, p


@dataclass(frozen=True)
class ConfidenceIntervals:
    """Bilateral shift intervals and unilateral leaf-mean upper bounds."""

    level: float
    shifts: np.ndarray
    leaves: np.ndarray | None


def confidence_intervals(dfit: DebiasedFit, level: float = 0.05) -> ConfidenceIntervals:
    """Intervals at significance ``level``.

    Shifts: ``delta_j -/+ z_{1-level/2} sqrt(V_jj)``.  Leaves:
    ``[-inf, mu_i + sqrt(t_i' V t_i) z_{1-level}]``, which excludes zero
    exactly when ``p_ss <= level``.
    """
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    half = ndtri(1.0 - level / 2.0) * np.sqrt(np.clip(np.diag(dfit.V), 0.0, None))
    shifts = np.column_stack([dfit.delta - half, dfit.delta + half])
    leaves = None
    if dfit.mu_hat is not None:
        up = dfit.mu_hat + dfit.leaf_sd * ndtri(1.0 - level)
        leaves = np.column_stack([np.full_like(up, -np.inf), up])
    return ConfidenceIntervals(level=level, shifts=shifts, leaves=leaves)
