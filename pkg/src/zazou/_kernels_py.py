"""Pure-Python coordinate-descent kernels.

Reference implementation of the hot loops and the fallback used when the
compiled ``_kernels`` extension is unavailable.  Semantics (argument order,
in-place updates, return values) match the Cython module exactly.
"""

from __future__ import annotations

import numpy as np


def _soft(z: float, g: float) -> float:
    if z > g:
        return z - g
    if z < -g:
        return z + g
    return 0.0


def shooting_cd(X, T, lam, delta, resid, tdelta, col_sq, order, tol,
                max_sweeps, feas_tol, trace=None):
    """Projected shooting sweeps for the sign-constrained lasso.

    Minimises ``0.5 * ||y - X d||^2 + lam * ||d||_1`` subject to
    ``T d <= 0`` one coordinate at a time.  Each coordinate takes the
    soft-thresholded univariate minimiser and projects it onto the interval
    of values that keep every row of ``T d`` non-positive; coordinates whose
    interval is empty are left untouched for that sweep.

    ``delta``, ``resid`` (``y - X d``) and ``tdelta`` (``T d``) are updated in
    place.  After the first full sweep only non-zero coordinates are visited
    until they settle, then a full sweep checks convergence.

    Returns
    -------
    sweeps : int
    converged : bool
        Largest coordinate change of a full sweep fell below ``tol``.
    pinned : int
        Coordinates that were clipped or infeasible in the last full sweep.
    """
    n = len(order)
    sweeps = 0
    pinned_full = 0
    full = True
    converged = False
    has_t = T is not None
    while sweeps < max_sweeps:
        maxch = 0.0
        pinned = 0
        for j in order:
            if not full and delta[j] == 0.0:
                continue
            a = col_sq[j]
            if a <= 0.0:
                continue
            x = X[:, j]
            old = delta[j]
            rho = float(x @ resid) + a * old
            theta = _soft(rho, lam) / a
            if has_t:
                v = T[:, j]
                u = tdelta - v * old
                pos = v > 0.0
                neg = v < 0.0
                zero = ~(pos | neg)
                if np.any(u[zero] > feas_tol):
                    pinned += 1
                    continue
                hi = float(np.min(-u[pos] / v[pos])) if pos.any() else np.inf
                lo = float(np.max(-u[neg] / v[neg])) if neg.any() else -np.inf
                if lo > hi:
                    pinned += 1
                    continue
                free = theta
                theta = min(max(theta, lo), hi)
                if abs(free - theta) > 1e-12 * (1.0 + abs(theta)):
                    pinned += 1
            ch = theta - old
            if ch != 0.0:
                resid -= x * ch
                if has_t:
                    tdelta += T[:, j] * ch
                delta[j] = theta
                maxch = max(maxch, abs(ch))
        if trace is not None:
            trace[sweeps] = 0.5 * float(resid @ resid) + lam * float(np.abs(delta).sum())
        sweeps += 1
        if full:
            pinned_full = pinned
            if maxch < tol:
                converged = True
                break
            full = False
        elif maxch < tol:
            full = True
    return sweeps, converged, pinned_full


def l1_quadratic_cd(G, c, gamma, beta, grad, skip, tol, max_sweeps):
    """Coordinate descent for ``0.5 b'Gb - c'b + gamma |b|_1``.

    ``grad`` holds ``G b`` and is kept in sync.  Coordinate ``skip`` (``-1``
    for none) stays fixed.  Returns ``(sweeps, status)`` with status 1
    converged, 0 out of sweeps, -1 diverged (objective unbounded below).
    """
    n = G.shape[0]
    sweeps = 0
    status = 0
    full = True
    while sweeps < max_sweeps:
        maxch = 0.0
        for j in range(n):
            if j == skip or (not full and beta[j] == 0.0):
                continue
            a = G[j, j]
            if a <= 0.0:
                continue
            theta = _soft(c[j] - grad[j] + a * beta[j], gamma) / a
            ch = theta - beta[j]
            if ch != 0.0:
                grad += G[j] * ch
                beta[j] = theta
                maxch = max(maxch, abs(ch))
                if abs(theta) > 1e12:
                    status = -1
                    break
        sweeps += 1
        if status == -1:
            break
        if full:
            if maxch < tol:
                status = 1
                break
            full = False
        elif maxch < tol:
            full = True
    return sweeps, status
