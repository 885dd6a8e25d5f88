# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled coordinate-descent kernels.

Mirrors :mod:`zazou._kernels_py` exactly; the pure-Python module is the
reference and the fallback when this extension is not built.  Every kernel
works in place on the arrays it is given and releases the GIL for the
numerical loops.
"""

import numpy as np
from libc.math cimport fabs, INFINITY

ctypedef const double[::1, :] fmat_t


cdef inline double _soft(double z, double g) noexcept nogil:
    if z > g:
        return z - g
    if z < -g:
        return z + g
    return 0.0


cdef double _shoot_coordinate(fmat_t X, fmat_t T, bint has_t, double lam,
                              double[::1] delta, double[::1] resid,
                              double[::1] tdelta, const double[::1] col_sq,
                              Py_ssize_t j, double feas_tol,
                              int* pinned) noexcept nogil:
    cdef Py_ssize_t i, m = X.shape[0]
    cdef double a = col_sq[j]
    cdef double old = delta[j]
    cdef double rho = 0.0, theta, free, lo = -INFINITY, hi = INFINITY
    cdef double u, v, b, ch
    if a <= 0.0:
        return 0.0
    for i in range(m):
        rho += X[i, j] * resid[i]
    rho += a * old
    theta = _soft(rho, lam) / a
    if has_t:
        for i in range(m):
            v = T[i, j]
            u = tdelta[i] - v * old
            if v > 0.0:
                b = -u / v
                if b < hi:
                    hi = b
            elif v < 0.0:
                b = -u / v
                if b > lo:
                    lo = b
            elif u > feas_tol:
                pinned[0] += 1
                return 0.0
        if lo > hi:
            pinned[0] += 1
            return 0.0
        free = theta
        if theta > hi:
            theta = hi
        elif theta < lo:
            theta = lo
        if fabs(free - theta) > 1e-12 * (1.0 + fabs(theta)):
            pinned[0] += 1
    ch = theta - old
    if ch != 0.0:
        for i in range(m):
            resid[i] -= X[i, j] * ch
        if has_t:
            for i in range(m):
                tdelta[i] += T[i, j] * ch
        delta[j] = theta
    return fabs(ch)


cdef double _objective(double lam, const double[::1] delta,
                       const double[::1] resid) noexcept nogil:
    cdef Py_ssize_t i
    cdef double rss = 0.0, l1 = 0.0
    for i in range(resid.shape[0]):
        rss += resid[i] * resid[i]
    for i in range(delta.shape[0]):
        l1 += fabs(delta[i])
    return 0.5 * rss + lam * l1


def shooting_cd(X, T, double lam, double[::1] delta, double[::1] resid,
                double[::1] tdelta, const double[::1] col_sq,
                const Py_ssize_t[::1] order, double tol, int max_sweeps,
                double feas_tol, trace=None):
    """Projected shooting sweeps; see ``_kernels_py.shooting_cd``."""
    cdef fmat_t Xv = X
    cdef bint has_t = T is not None
    cdef fmat_t Tv = T if has_t else np.zeros((1, 1), order="F")
    cdef double[::1] tr
    cdef bint has_trace = trace is not None
    if has_trace:
        tr = trace
    cdef Py_ssize_t k, j, n = order.shape[0]
    cdef int sweeps = 0, pinned = 0, pinned_full = 0
    cdef bint full = True, converged = False
    cdef double maxch, ch
    with nogil:
        while sweeps < max_sweeps:
            maxch = 0.0
            pinned = 0
            for k in range(n):
                j = order[k]
                if not full and delta[j] == 0.0:
                    continue
                ch = _shoot_coordinate(Xv, Tv, has_t, lam, delta, resid, tdelta,
                                       col_sq, j, feas_tol, &pinned)
                if ch > maxch:
                    maxch = ch
            if has_trace:
                tr[sweeps] = _objective(lam, delta, resid)
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


def l1_quadratic_cd(const double[:, ::1] G, const double[::1] c, double gamma,
                    double[::1] beta, double[::1] grad, Py_ssize_t skip,
                    double tol, int max_sweeps):
    """Coordinate descent for ``0.5 b'Gb - c'b + gamma |b|_1``.

    Returns ``(sweeps, status)`` with status 1 converged, 0 out of sweeps,
    -1 diverged (objective unbounded below).
    """
    cdef Py_ssize_t i, j, n = G.shape[0]
    cdef int sweeps = 0, status = 0
    cdef bint full = True
    cdef double a, z, theta, ch, maxch
    with nogil:
        while sweeps < max_sweeps:
            maxch = 0.0
            for j in range(n):
                if j == skip or (not full and beta[j] == 0.0):
                    continue
                a = G[j, j]
                if a <= 0.0:
                    continue
                z = c[j] - grad[j] + a * beta[j]
                theta = _soft(z, gamma) / a
                ch = theta - beta[j]
                if ch != 0.0:
                    for i in range(n):
                        grad[i] += G[j, i] * ch
                    beta[j] = theta
                    if fabs(ch) > maxch:
                        maxch = fabs(ch)
                    if fabs(theta) > 1e12:
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
