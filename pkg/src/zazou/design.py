"""OU covariance on a tree and the whitened regression design.

The z-scores are modelled as ``z ~ N(T delta, Sigma(alpha))`` with
``T = U diag(Lambda)``.  Whitening with an upper-triangular ``R`` such that
``R Sigma R' = I`` turns the generalized least-squares fit into an ordinary
lasso in ``X = R T`` and ``y = R z``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import SingularCovarianceError
from .tree import TreeGeometry, UltrametricTree, incidence, shrinkage_diag

__all__ = [
    "OUParams",
    "OUDesign",
    "ou_params",
    "ou_covariance",
    "whitening_factor",
    "build_design",
    "default_alpha_grid",
]

JITTER = 1e-10


@dataclass(frozen=True)
class OUParams:
    """Selection strength with the variance that makes leaf margins unit.

    ``sigma2 = 2 alpha / (1 - exp(-2 alpha h))``.
    """

    alpha: float
    sigma2: float
    h: float


def ou_params(alpha: float, h: float) -> OUParams:
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha!r}")
    return OUParams(alpha=float(alpha), sigma2=float(-2.0 * alpha / np.expm1(-2.0 * alpha * h)),
                    h=float(h))


def ou_covariance(geom: TreeGeometry, alpha: float) -> np.ndarray:
    """Leaf covariance of the stationary-normalized OU process.

    ``Sigma_ij = exp(-2 alpha d_ij) (1 - exp(-2 alpha t_ij)) / (1 - exp(-2 alpha h))``,
    which has an exactly unit diagonal since ``d_ii = 0`` and ``t_ii = h``.
    """
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha!r}")
    h = geom.height
    num = -np.expm1(-2.0 * alpha * geom.mrca_time)
    S = np.exp(-2.0 * alpha * geom.distance) * num / (-np.expm1(-2.0 * alpha * h))
    S = 0.5 * (S + S.T)
    np.fill_diagonal(S, 1.0)
    return S


def _cholesky_jittered(S):
    try:
        return linalg.cholesky(S, lower=True, check_finite=False), 0.0
    except linalg.LinAlgError:
        pass
    A = S + JITTER * np.eye(S.shape[0])
    try:
        return linalg.cholesky(A, lower=True, check_finite=False), JITTER
    except linalg.LinAlgError:
        raise SingularCovarianceError(
            "covariance is numerically singular even after jitter; use a larger alpha") from None


def whitening_factor(Sigma: np.ndarray, return_logdet: bool = False):
    """Upper-triangular ``R`` with ``R Sigma R' = I`` and ``R'R = Sigma^{-1}``.

    Factorizes the index-reversed matrix ``J Sigma J = L L'`` so that
    ``Sigma = W W'`` with ``W = J L J`` upper triangular, and returns
    ``R = W^{-1}``.  A one-off ``1e-10 I`` jitter is tried when the plain
    factorization fails.

    Returns
    -------
    R : ndarray
    logdet : float
        ``log |Sigma|`` (of the jittered matrix if jitter was needed); only
        when ``return_logdet`` is true.
    """
    S = np.asarray(Sigma, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError("Sigma must be square")
    L, _ = _cholesky_jittered(S[::-1, ::-1])
    W = L[::-1, ::-1]
    R = linalg.solve_triangular(W, np.eye(S.shape[0]), lower=False, check_finite=False)
    if return_logdet:
        return R, float(2.0 * np.log(np.diag(L)).sum())
    return R


@dataclass(frozen=True, eq=False)
class OUDesign:
    """Whitened regression problem for one ``alpha``.

    Attributes
    ----------
    alpha : float
    Sigma, R : ndarray, shape (m, m)
    T : ndarray, shape (m, n)
        ``U diag(Lambda)``; also the feasibility matrix (``T delta <= 0``).
    X : ndarray, shape (m, n)
        ``R T``, Fortran-ordered for the column kernels.
    y : ndarray, shape (m,)
        ``R z``.
    z : ndarray, shape (m,)
    logdet : float
        ``log |Sigma|``.
    """

    alpha: float
    Sigma: np.ndarray
    R: np.ndarray
    T: np.ndarray
    X: np.ndarray
    y: np.ndarray
    z: np.ndarray
    logdet: float


def build_design(tree: UltrametricTree, geom: TreeGeometry, z, alpha: float,
                 U: np.ndarray | None = None) -> OUDesign:
    """Assemble ``Sigma``, ``R``, ``T``, ``X`` and ``y`` for one ``alpha``.

    ``U`` may be passed to reuse a precomputed incidence matrix.
    """
    z = np.array(z, dtype=float)
    m = tree.n_leaves
    if z.shape != (m,):
        raise ValueError(f"z has shape {z.shape}, expected ({m},)")
    if not np.all(np.isfinite(z)):
        raise ValueError("z must be finite")
    if U is None:
        U = incidence(tree)
    Sigma = ou_covariance(geom, alpha)
    R, logdet = whitening_factor(Sigma, return_logdet=True)
    T = np.asfortranarray(U * shrinkage_diag(tree, alpha)[None, :])
    X = np.asfortranarray(R @ T)
    y = R @ z
    for a in (Sigma, R, T, X, y, z):
        a.setflags(write=False)
    return OUDesign(alpha=float(alpha), Sigma=Sigma, R=R, T=T, X=X, y=y, z=z, logdet=logdet)


def default_alpha_grid(h: float, size: int = 8) -> np.ndarray:
    """``size`` log-spaced values between ``0.05/h`` and ``20/h``."""
    return np.geomspace(0.05 / h, 20.0 / h, size)
