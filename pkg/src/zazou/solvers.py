"""Sign-constrained lasso and its scaled variant.

The problem is

    minimize  0.5 * ||y - X d||^2 + lam * ||d||_1   subject to  T d <= 0.

The workhorse is projected shooting: each coordinate takes its
soft-thresholded minimizer, then is clipped to the interval that keeps
every row of ``T d`` non-positive.  Because the rows of ``T`` couple many
coordinates, cyclic projection can stop at a point where no single
coordinate can move although the objective is not minimal.  When a sweep
ends with clipped coordinates, the driver re-solves the problem with a
small primal-dual interior-point method, and a final projected-shooting
polish restores exact zeros and feasibility.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from ._backend import kernels
from .errors import DegenerateFitError

__all__ = [
    "ConstrainedLassoProblem",
    "ShiftFit",
    "SolverOptions",
    "solve_univariate",
    "constrained_lasso",
    "lasso_objective",
    "kkt_violation",
    "interior_point_lasso",
    "scaled_lasso",
    "default_lambda0",
]


@dataclass(frozen=True, eq=False)
class ConstrainedLassoProblem:
    """Data of one constrained lasso.

    ``T`` may be ``None`` for an unconstrained lasso.
    """

    X: np.ndarray
    y: np.ndarray
    T: np.ndarray | None
    lam: float

    def __post_init__(self):
        X = np.asfortranarray(self.X, dtype=float)
        y = np.ascontiguousarray(self.y, dtype=float)
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise ValueError("X must be (m, n) and y (m,)")
        T = self.T
        if T is not None:
            T = np.asfortranarray(T, dtype=float)
            if T.shape[1] != X.shape[1]:
                raise ValueError("T must have as many columns as X")
        if not self.lam >= 0:
            raise ValueError(f"lambda must be non-negative, got {self.lam!r}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "T", T)
        object.__setattr__(self, "lam", float(self.lam))

    @property
    def shape(self):
        return self.X.shape


@dataclass(frozen=True)
class SolverOptions:
    """Tuning knobs of :func:`constrained_lasso`."""

    tol: float = 1e-8
    max_iter: int = 10_000
    feas_tol: float = 1e-9
    escape: bool = True


@dataclass(frozen=True, eq=False)
class ShiftFit:
    """Solution of a (scaled) constrained lasso.

    Attributes
    ----------
    delta : ndarray, shape (n,)
    objective : float
        ``0.5 ||y - X delta||^2 + lam ||delta||_1``.
    iterations : int
        Coordinate sweeps, summed over all phases (and over the outer
        iterations of a scaled fit).
    converged : bool
    lam : float
        Penalty of the final inner solve.
    sigma_hat : float or None
        Noise scale (scaled fits only).
    escapes : int
        Interior-point escapes that were needed.
    max_violation : float
        ``max(T delta)`` (``0`` when unconstrained).
    """

    delta: np.ndarray
    objective: float
    iterations: int
    converged: bool
    lam: float
    sigma_hat: float | None = None
    escapes: int = 0
    max_violation: float = 0.0
    lambda0: float | None = None
    outer_iterations: int = 0
    warnings: tuple = field(default=())


def lasso_objective(X, y, delta, lam) -> float:
    r = y - X @ delta
    return 0.5 * float(r @ r) + lam * float(np.abs(delta).sum())


def solve_univariate(x, residual, u, v, lam):
    """Minimize ``0.5 ||residual - x theta||^2 + lam |theta|`` on ``u + v theta <= 0``.

    ``residual`` is the partial residual with the coordinate removed.  The
    unconstrained soft-threshold solution is projected onto
    ``[theta_min, theta_max]``.

    Returns
    -------
    float or None
        ``None`` when the feasible interval is empty (or ``x = 0``).
    """
    x = np.asarray(x, dtype=float)
    a = float(x @ x)
    if a <= 0.0:
        return None
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    rho = float(x @ np.asarray(residual, dtype=float))
    theta = math.copysign(max(abs(rho) - lam, 0.0), rho) / a
    pos, neg = v > 0, v < 0
    if np.any(u[~(pos | neg)] > 0):
        return None
    hi = float(np.min(-u[pos] / v[pos])) if pos.any() else math.inf
    lo = float(np.max(-u[neg] / v[neg])) if neg.any() else -math.inf
    if lo > hi:
        return None
    return min(max(theta, lo), hi)


def constrained_lasso(problem: ConstrainedLassoProblem, init=None, tol: float = 1e-8,
                      max_iter: int = 10_000, options: SolverOptions | None = None,
                      order=None) -> ShiftFit:
    """Solve the sign-constrained lasso by projected shooting.

    Parameters
    ----------
    problem : ConstrainedLassoProblem
    init : array_like, optional
        Feasible starting point (default zero).
    tol : float
        Convergence threshold on the largest coordinate change of a full
        sweep.
    max_iter : int
        Maximum number of sweeps per shooting phase.
    options : SolverOptions, optional
        Overrides ``tol`` and ``max_iter`` when given.
    order : array_like of int, optional
        Coordinate visiting order (default cyclic).

    Returns
    -------
    ShiftFit
        ``converged`` is false (with a warning) when the sweep budget ran
        out.
    """
    opt = options or SolverOptions(tol=tol, max_iter=max_iter)
    X, y, T, lam = problem.X, problem.y, problem.T, problem.lam
    m, n = X.shape
    delta = np.zeros(n) if init is None else np.array(init, dtype=float)
    if delta.shape != (n,):
        raise ValueError(f"init has shape {delta.shape}, expected ({n},)")
    resid = y - X @ delta
    tdelta = T @ delta if T is not None else np.zeros(m)
    if T is not None and tdelta.size and tdelta.max() > opt.feas_tol:
        raise ValueError("initial point is infeasible")
    col_sq = np.einsum("ij,ij->j", X, X)
    order = np.arange(n, dtype=np.intp) if order is None else np.ascontiguousarray(order, dtype=np.intp)

    sweeps, converged, pinned = kernels.shooting_cd(
        X, T, lam, delta, resid, tdelta, col_sq, order, opt.tol, opt.max_iter, opt.feas_tol)
    total = sweeps
    escapes = 0
    if T is not None and pinned and opt.escape:
        escapes = 1
        delta[:] = interior_point_lasso(X, y, T, lam)
        sweeps, converged, _, _ = _polish(X, y, T, lam, delta, col_sq, order, opt)
        total += sweeps
    if T is not None:
        tdelta = T @ delta
    viol = float(tdelta.max()) if (T is not None and m) else 0.0
    resid = y - X @ delta
    obj = 0.5 * float(resid @ resid) + lam * float(np.abs(delta).sum())
    warns = ()
    if not converged:
        msg = f"constrained lasso did not converge in {opt.max_iter} sweeps (lambda={lam:.6g})"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        warns = (msg,)
    return ShiftFit(delta=delta, objective=obj, iterations=total, converged=bool(converged),
                    lam=lam, escapes=escapes, max_violation=max(viol, 0.0) if T is not None else 0.0,
                    warnings=warns)


def interior_point_lasso(X, y, T, lam, tol: float = 1e-10, max_iter: int = 100):
    """Primal-dual interior-point solve of the constrained lasso.

    Uses the epigraph form ``min 0.5 d'Kd - b'd + lam 1'u`` with
    ``d - u <= 0``, ``-d - u <= 0`` and ``T d <= 0`` (``K = X'X``,
    ``b = X'y``) and Mehrotra predictor-corrector steps.  The ``u`` block is
    eliminated, so each iteration factors one ``n x n`` matrix.  Returns
    ``d``; the point is strictly interior, so callers polish it.
    """
    X = np.asarray(X, dtype=float)
    T = np.asarray(T, dtype=float)
    n = X.shape[1]
    p = T.shape[0]
    K = X.T @ X
    b = X.T @ y
    scale = max(1.0, float(np.abs(b).max()), lam)
    nc = 2 * n + p
    i1, i2 = slice(0, n), slice(n, 2 * n)
    i3 = slice(2 * n, nc)
    d = np.zeros(n)
    u = np.ones(n)
    s = np.ones(nc)
    z = np.ones(nc)
    z[: 2 * n] += 0.5 * lam

    def gx(dd, du):
        return np.concatenate([dd - du, -dd - du, T @ dd])

    def gtz(v):
        return v[i1] - v[i2] + T.T @ v[i3], -v[i1] - v[i2]

    def max_step(v, dv):
        neg = dv < 0
        return float(np.min(-v[neg] / dv[neg])) if neg.any() else np.inf

    for _ in range(max_iter):
        gd, gu = gtz(z)
        rd = K @ d - b + gd
        ru = lam + gu
        rp = gx(d, u) + s
        mu = float(s @ z) / nc
        pres = float(np.abs(rp).max())
        dres = max(float(np.abs(rd).max()), float(np.abs(ru).max()))
        # the dual residual stalls near sqrt(eps) when K is singular
        if pres <= tol * scale and mu <= tol * scale and dres <= math.sqrt(tol) * scale:
            break
        w = z / s
        w1, w2 = w[i1], w[i2]
        wsum = w1 + w2
        wdif = w2 - w1
        M = (T.T * w[i3]) @ T
        M += K
        M[np.diag_indices(n)] += 4.0 * w1 * w2 / wsum
        fac = _jittered_cho(M)
        if fac is None:
            # hopelessly ill-conditioned near the boundary; the polish finishes
            break

        def newton(c):
            g = (z * rp - c) / s
            hd, hu = gtz(g)
            rhs_d = -rd - hd
            rhs_u = -ru - hu
            dd = cho_solve(fac, rhs_d - wdif * rhs_u / wsum, check_finite=False)
            du = (rhs_u - wdif * dd) / wsum
            ds = -rp - gx(dd, du)
            dz = (-c - z * ds) / s
            return dd, du, ds, dz

        sz = s * z
        dd, du, ds, dz = newton(sz)
        a_aff = min(1.0, max_step(s, ds), max_step(z, dz))
        mu_aff = float((s + a_aff * ds) @ (z + a_aff * dz)) / nc
        sigma = (mu_aff / mu) ** 3
        dd, du, ds, dz = newton(sz + ds * dz - sigma * mu)
        a = min(1.0, 0.99 * min(max_step(s, ds), max_step(z, dz)))
        if not (np.isfinite(a) and np.all(np.isfinite(dd))) or a < 1e-12:
            break
        d += a * dd
        u += a * du
        s += a * ds
        z += a * dz
    return d


def _jittered_cho(M):
    """Cholesky factor of ``M``, adding a growing ridge when it fails; ``None`` if hopeless."""
    n = M.shape[0]
    scale = max(float(np.trace(M)) / n, 1e-300)
    added = 0.0
    for rel in (0.0, 1e-14, 1e-12, 1e-10, 1e-8):
        M[np.diag_indices(n)] += rel * scale - added
        added = rel * scale
        try:
            return cho_factor(M, check_finite=False)
        except np.linalg.LinAlgError:
            continue
    return None


def _polish(X, y, T, lam, delta, col_sq, order, opt):
    """Make ``delta`` feasible in place and finish it with projected shooting."""
    tdelta = T @ delta
    _restore_feasibility(T, delta, tdelta)
    resid = y - X @ delta
    sweeps, converged, pinned = kernels.shooting_cd(
        X, T, lam, delta, resid, tdelta, col_sq, order, opt.tol, opt.max_iter, opt.feas_tol)
    return sweeps, converged, pinned, resid


def _restore_feasibility(T, delta, tdelta):
    """Pull a nearly feasible point back into ``T d <= 0``.

    Lowers, for each violated row, the coordinate with the largest entry
    when its column is non-negative (true for tree designs), which cannot
    break other rows.
    """
    over = np.flatnonzero(tdelta > 0.0)
    for i in over:
        row = T[i]
        j = int(np.argmax(row))
        if row[j] > 0 and np.all(T[:, j] >= 0):
            step = tdelta[i] / row[j]
            delta[j] -= step
            tdelta -= T[:, j] * step
    return delta


def kkt_violation(X, y, T, delta, lam, boundary_tol: float = 1e-9) -> float:
    """Largest KKT residual over coordinates strictly inside their interval.

    For coordinate ``j`` the feasible interval is computed with all other
    coordinates fixed.  Boundary coordinates are skipped.
    """
    X = np.asarray(X, dtype=float)
    delta = np.asarray(delta, dtype=float)
    r = y - X @ delta
    g = X.T @ r
    td = T @ delta if T is not None else None
    worst = 0.0
    for j in range(delta.size):
        if T is not None:
            v = T[:, j]
            u = td - v * delta[j]
            pos, neg = v > 0, v < 0
            hi = float(np.min(-u[pos] / v[pos])) if pos.any() else math.inf
            lo = float(np.max(-u[neg] / v[neg])) if neg.any() else -math.inf
            margin = boundary_tol * (1.0 + abs(delta[j]))
            if not (lo + margin < delta[j] < hi - margin):
                continue
        if delta[j] == 0.0:
            err = max(abs(g[j]) - lam, 0.0)
        else:
            err = abs(g[j] - lam * math.copysign(1.0, delta[j]))
        worst = max(worst, err)
    return worst


def default_lambda0(m: int, n: int) -> float:
    """Universal rate ``sqrt(2 log n / m)``."""
    return math.sqrt(2.0 * math.log(max(n, 2)) / m)


def scaled_lasso(problem: ConstrainedLassoProblem, lambda0: float | None = None,
                 tol: float = 1e-6, max_outer: int = 100, init=None,
                 options: SolverOptions | None = None, sigma_floor: float = 1e-8,
                 coarse_tol: float = 1e-3) -> ShiftFit:
    """Joint estimate of shifts and noise scale.

    Alternates ``sigma = ||y - X d|| / sqrt(m)`` with a constrained lasso at
    ``lam = lambda0 * m * sigma`` until ``sigma`` moves by less than ``tol``.
    While ``sigma`` still moves by more than ``coarse_tol`` the inner solves
    skip the interior-point escape; only the final iterations are exact,
    and those take a safeguarded secant step on ``sigma`` when the last two
    exact updates allow one.  The reported ``sigma_hat`` is recomputed from
    the final ``delta`` so the fixed-point identity holds exactly; the last
    solve used a noise level within ``tol`` of it.  ``problem.lam`` is ignored.

    Raises
    ------
    DegenerateFitError
        If the noise estimate collapses below ``sigma_floor``.
    """
    X, y, T = problem.X, problem.y, problem.T
    m, n = X.shape
    lam0 = default_lambda0(m, n) if lambda0 is None else float(lambda0)
    if not lam0 > 0:
        raise ValueError("lambda0 must be positive")
    opt = options or SolverOptions()
    coarse = replace(opt, escape=False)
    exact = not opt.escape
    delta = np.zeros(n) if init is None else np.array(init, dtype=float)
    sigma = float(np.linalg.norm(y - X @ delta)) / math.sqrt(m)
    total = 0
    escapes = 0
    converged = False
    fit = None
    warns = []
    outer = 0
    prev = None
    for outer in range(1, max_outer + 1):
        if sigma < sigma_floor:
            raise DegenerateFitError(
                f"noise estimate collapsed to {sigma:.3g}; the base rate lambda0={lam0:.3g} "
                "is too small or the response is zero")
        sub = ConstrainedLassoProblem(X, y, T, lam0 * m * sigma)
        with warnings.catch_warnings():
            if not exact:
                warnings.simplefilter("ignore", RuntimeWarning)
            fit = constrained_lasso(sub, init=delta, options=opt if exact else coarse)
        total += fit.iterations
        escapes += fit.escapes
        if exact:
            warns.extend(fit.warnings)
        delta = fit.delta
        new_sigma = float(np.linalg.norm(y - X @ delta)) / math.sqrt(m)
        gap = new_sigma - sigma
        if not exact:
            exact = abs(gap) < coarse_tol
            sigma = new_sigma
            continue
        if abs(gap) < tol:
            sigma = new_sigma
            converged = fit.converged
            break
        nxt = new_sigma
        if prev is not None and sigma != prev[0]:
            # secant on gap(sigma); accepted only beyond the plain update
            slope = (gap - prev[1]) / (sigma - prev[0])
            if -1.0 < slope < 0.0:
                cand = sigma - gap / slope
                lo, hi = sorted((new_sigma, sigma + 10.0 * gap))
                if lo <= cand <= hi:
                    nxt = cand
        prev = (sigma, gap)
        sigma = nxt
    if sigma < sigma_floor:
        raise DegenerateFitError(
            f"noise estimate collapsed to {sigma:.3g}; the base rate lambda0={lam0:.3g} is too small")
    if not converged:
        warns.append(f"scaled lasso stopped after {outer} outer iterations")
    return ShiftFit(delta=delta, objective=fit.objective, iterations=total,
                    converged=converged, lam=fit.lam, sigma_hat=sigma, escapes=escapes,
                    max_violation=fit.max_violation, lambda0=lam0,
                    outer_iterations=outer, warnings=tuple(warns))
