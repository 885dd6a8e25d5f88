"""p-value correction pipeline, FDR threshold and baseline adjustments.

``correct`` chains the steps: p-values to z-scores, a BIC search over
``(alpha, lambda)``, debiasing of the selected scaled-lasso fit, and the
debiased-lasso FDR threshold that turns leaf t-scores into q-values.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from .debias import DebiasedFit, ScoreSystem, debias, score_system_ci, score_system_ss
from .design import OUDesign, build_design, default_alpha_grid
from .errors import LabelMismatchError, NumericalError
from .solvers import ConstrainedLassoProblem, ShiftFit, SolverOptions, scaled_lasso
from .tree import TreeGeometry, UltrametricTree, geometry, incidence

__all__ = [
    "normal_cdf",
    "normal_quantile",
    "ZScoreVector",
    "p_to_z",
    "BICTrace",
    "bic_select",
    "bic_penalty",
    "default_lambda_grid",
    "fdr_t_max",
    "fdr_candidates",
    "fdr_threshold",
    "q_values",
    "CorrectionConfig",
    "CorrectionResult",
    "correct",
    "bh_adjust",
    "by_adjust",
]

P_EPS = 1e-12
SUPPORT_RTOL = 1e-10


# --------------------------------------------------------------------------
# normal distribution


def normal_cdf(x):
    """Standard normal CDF."""
    return ndtr(x)


def normal_quantile(p):
    """Standard normal quantile; ``p`` must lie in the open unit interval."""
    a = np.asarray(p, dtype=float)
    if np.any(~(a > 0) | ~(a < 1)):
        raise ValueError("normal_quantile needs 0 < p < 1")
    return ndtri(p)


@dataclass(frozen=True, eq=False)
class ZScoreVector:
    """z-scores with the clamped p-values they come from."""

    z: np.ndarray
    p: np.ndarray
    labels: tuple
    n_clamped: int


def p_to_z(p, labels=None, eps: float = P_EPS) -> ZScoreVector:
    """``z = Phi^{-1}(p)`` after clamping ``p`` into ``[eps, 1 - eps]``.

    Small p-values map to strongly negative z.
    """
    p = np.array(p, dtype=float)
    if p.ndim != 1:
        raise ValueError("p must be one-dimensional")
    if np.any(~np.isfinite(p)) or np.any((p < 0) | (p > 1)):
        raise ValueError("p-values must lie in [0, 1]")
    pc = np.clip(p, eps, 1.0 - eps)
    n_clamped = int(np.count_nonzero(pc != p))
    labs = tuple(labels) if labels is not None else tuple(str(i) for i in range(p.size))
    return ZScoreVector(z=ndtri(pc), p=pc, labels=labs, n_clamped=n_clamped)


# --------------------------------------------------------------------------
# BIC grid


def bic_penalty(m: int) -> float:
    """Per-shift penalty ``log(log m) log m``, floored at zero for tiny ``m``."""
    return max(math.log(math.log(m)), 0.0) * math.log(m) if m > 1 else 0.0


def default_lambda_grid(size: int = 10) -> np.ndarray:
    """Fractions of ``lambda_max``: ``size`` geometric values from 1 down to 0.01."""
    return np.geomspace(1.0, 0.01, size)


@dataclass(frozen=True, eq=False)
class BICTrace:
    """Every ``(alpha, lambda)`` cell of the grid search.

    Arrays are indexed ``[a, l]`` with ``alphas`` increasing and
    ``fractions`` decreasing (the warm-start order).

    Attributes
    ----------
    alphas, fractions : ndarray
    lambda_max : ndarray, shape (A,)
        ``||X'y||_inf`` per alpha.
    lambda0 : ndarray, shape (A, L)
        Scaled-lasso base rate of each cell.
    lam : ndarray, shape (A, L)
        Final inner penalty.
    sigma, rss, logdet, support, bic : ndarray
    delta : ndarray, shape (A, L, n)
    errors : tuple of tuple of str
        Empty string for cells that solved.
    selected : tuple of int
        ``(a, l)`` of the minimizer.
    """

    alphas: np.ndarray
    fractions: np.ndarray
    lambda_max: np.ndarray
    lambda0: np.ndarray
    lam: np.ndarray
    sigma: np.ndarray
    rss: np.ndarray
    logdet: np.ndarray
    support: np.ndarray
    bic: np.ndarray
    delta: np.ndarray
    converged: np.ndarray
    errors: tuple
    selected: tuple
    m: int
    warnings: tuple = field(default=())

    @property
    def alpha_hat(self) -> float:
        return float(self.alphas[self.selected[0]])

    @property
    def lambda_hat(self) -> float:
        return float(self.lam[self.selected])

    @property
    def lambda0_hat(self) -> float:
        return float(self.lambda0[self.selected])

    @property
    def fraction_hat(self) -> float:
        return float(self.fractions[self.selected[1]])

    @property
    def delta_hat(self) -> np.ndarray:
        return self.delta[self.selected]

    @property
    def sigma_hat(self) -> float:
        return float(self.sigma[self.selected])

    def recompute(self, a: int, l: int) -> float:
        """BIC of cell ``(a, l)`` from its stored parts."""
        return float(self.rss[a, l] + self.logdet[a] + self.support[a, l] * bic_penalty(self.m))


def _support_size(delta) -> int:
    top = float(np.abs(delta).max()) if delta.size else 0.0
    if top == 0.0:
        return 0
    return int(np.count_nonzero(np.abs(delta) > SUPPORT_RTOL * top))


def bic_select(tree: UltrametricTree, z, alpha_grid=None, lambda_grid=None,
               geom: TreeGeometry | None = None, U=None,
               options: SolverOptions | None = None) -> BICTrace:
    """Grid search of ``(alpha, lambda)`` by the modified BIC.

    For each ``alpha`` the lambda grid is a set of fractions ``f`` of
    ``lambda_max = ||X'y||_inf``; a fraction maps to the scaled-lasso base
    rate ``lambda0 = f lambda_max / (sqrt(m) ||y||)`` so that ``f = 1``
    yields the null fit.  Fractions are solved from large to small with warm
    starts.  A cell whose solve fails is kept with ``bic = inf``.

    The criterion is ``||y - X delta||^2 + log|Sigma| + |delta|_0 log(log m) log m``;
    ties go to the larger lambda, then the larger alpha.

    Raises
    ------
    NumericalError
        When every cell fails.
    """
    z = np.asarray(z, dtype=float)
    m, n = tree.n_leaves, tree.n_nodes
    geom = geometry(tree) if geom is None else geom
    U = incidence(tree) if U is None else U
    alphas = np.sort(np.asarray(default_alpha_grid(tree.height) if alpha_grid is None
                                else alpha_grid, dtype=float))
    fracs = np.sort(np.asarray(default_lambda_grid() if lambda_grid is None
                               else lambda_grid, dtype=float))[::-1]
    if alphas.size == 0 or fracs.size == 0:
        raise ValueError("grids must be non-empty")
    if np.any(alphas <= 0) or np.any(fracs <= 0):
        raise ValueError("grid values must be positive")
    A, L = alphas.size, fracs.size
    shape = (A, L)
    lam0 = np.full(shape, np.nan)
    lam = np.full(shape, np.nan)
    sigma = np.full(shape, np.nan)
    rss = np.full(shape, np.nan)
    support = np.zeros(shape, dtype=np.intp)
    bic = np.full(shape, np.inf)
    conv = np.zeros(shape, dtype=bool)
    deltas = np.full((A, L, n), np.nan)
    logdet = np.full(A, np.nan)
    lmax = np.full(A, np.nan)
    errors = [[""] * L for _ in range(A)]
    warns: list = []
    pen = bic_penalty(m)
    for a, alpha in enumerate(alphas):
        try:
            des = build_design(tree, geom, z, alpha, U=U)
        except NumericalError as exc:
            for l in range(L):
                errors[a][l] = str(exc)
            continue
        logdet[a] = des.logdet
        X, y = des.X, des.y
        lmax[a] = float(np.abs(X.T @ y).max())
        ynorm = float(np.linalg.norm(y))
        prob = ConstrainedLassoProblem(X, y, des.T, 0.0)
        warm = np.zeros(n)
        for l, f in enumerate(fracs):
            if ynorm == 0.0 or lmax[a] == 0.0:
                d = np.zeros(n)
                lam0[a, l] = 0.0
                lam[a, l] = 0.0
                sigma[a, l] = ynorm / math.sqrt(m)
                conv[a, l] = True
            else:
                l0 = f * lmax[a] / (math.sqrt(m) * ynorm)
                lam0[a, l] = l0
                try:
                    with warnings.catch_warnings():
                        warnings.simplefilter("ignore", RuntimeWarning)
                        fit = scaled_lasso(prob, lambda0=l0, init=warm, options=options)
                except NumericalError as exc:
                    errors[a][l] = str(exc)
                    continue
                d = fit.delta
                warm = d
                lam[a, l] = fit.lam
                sigma[a, l] = fit.sigma_hat
                conv[a, l] = fit.converged
                if not fit.converged:
                    warns.append(f"cell alpha={alpha:.6g}, fraction={f:.6g} did not converge")
            r = y - X @ d
            rss[a, l] = float(r @ r)
            support[a, l] = _support_size(d)
            deltas[a, l] = d
            bic[a, l] = rss[a, l] + logdet[a] + support[a, l] * pen
    finite = np.isfinite(bic)
    if not finite.any():
        msgs = sorted({e for row in errors for e in row if e})
        raise NumericalError("all grid cells failed: " + "; ".join(msgs))
    best = float(bic[finite].min())
    tie = finite & (bic <= best + 1e-10 * max(1.0, abs(best)))
    cells = np.argwhere(tie)
    # larger lambda = smaller l index, then larger alpha
    key = sorted((int(l), -int(a)) for a, l in cells)[0]
    selected = (-key[1], key[0])
    return BICTrace(alphas=alphas, fractions=fracs, lambda_max=lmax, lambda0=lam0, lam=lam,
                    sigma=sigma, rss=rss, logdet=logdet, support=support, bic=bic,
                    delta=deltas, converged=conv, errors=tuple(tuple(r) for r in errors),
                    selected=selected, m=m, warnings=tuple(warns))


# --------------------------------------------------------------------------
# FDR threshold


def fdr_t_max(m: int) -> float:
    """Upper end ``sqrt(2 log m - 2 log log m)`` of the threshold search (floored at 0)."""
    if m < 2:
        raise ValueError("the FDR threshold needs m >= 2")
    return math.sqrt(max(2.0 * math.log(m) - 2.0 * math.log(math.log(m)), 0.0))


def fdr_candidates(t_scores, alpha: float) -> np.ndarray:
    """Sorted thresholds at which the defining inequality can first hold.

    The ratio ``2m (1 - Phi(t)) / max(R(t), 1)`` is decreasing between
    jumps of ``R``, so its first crossing below ``alpha`` is either a jump
    point (an order statistic of ``-t``), a point ``tau_r`` where
    ``2m (1 - Phi(tau_r)) = alpha r``, or an end of ``[0, t_max]``.
    """
    t = np.asarray(t_scores, dtype=float)
    m = t.size
    tmax = fdr_t_max(m)
    s = -t[np.isfinite(t)]
    r = np.arange(1, m + 1)
    tau = -ndtri(alpha * r / (2.0 * m))
    c = np.concatenate([[0.0, tmax], s, tau])
    c = c[(c >= 0.0) & (c <= tmax)]
    return np.unique(c)


def _fdr_ok(c, R, m, alpha):
    return 2.0 * m * ndtr(-c) / np.maximum(R, 1) <= alpha * (1.0 + 1e-12)


def fdr_threshold(t_scores, alpha: float) -> float:
    """Smallest ``t in [0, t_max]`` with ``2m (1 - Phi(t)) / max(R(t), 1) <= alpha``.

    ``R(t)`` counts scores ``<= -t``; ``nan`` scores never count but are
    included in ``m``.  Falls back to ``sqrt(2 log m)`` when no threshold
    qualifies.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    t = np.asarray(t_scores, dtype=float)
    m = t.size
    c = fdr_candidates(t, alpha)
    s = np.sort(-t[np.isfinite(t)])
    R = s.size - np.searchsorted(s, c, side="left")
    ok = _fdr_ok(c, R, m, alpha)
    if ok.any():
        return float(c[np.argmax(ok)])
    return math.sqrt(2.0 * math.log(m))


def q_values(t_scores, p_ss, t_star: float, alpha: float):
    """q-values ``alpha * p_ss / Phi(-t_star)`` and the rejection mask.

    A leaf is rejected iff its t-score is ``<= -t_star``; the q-value of any
    other leaf is nudged just above ``alpha`` if rounding put it at or
    below, so that ``q <= alpha`` matches the rejections exactly.
    """
    t = np.asarray(t_scores, dtype=float)
    p = np.asarray(p_ss, dtype=float)
    q = alpha * (p / ndtr(-t_star))
    with np.errstate(invalid="ignore"):
        rej = t <= -t_star
        fix = ~rej & (q <= alpha)
    q = np.where(fix, np.nextafter(alpha, 1.0), q)
    return q, rej


# --------------------------------------------------------------------------
# pipeline


@dataclass(frozen=True)
class CorrectionConfig:
    """Settings of :func:`correct`.

    ``lambda_grid`` holds fractions of ``lambda_max`` in ``(0, 1]``.
    """

    fdr: float = 0.05
    method: str = "ss"
    alpha_grid: tuple | None = None
    lambda_grid: tuple | None = None
    gamma: float | None = None
    lambda_node: float | None = None
    solver: SolverOptions = field(default_factory=SolverOptions)

    def __post_init__(self):
        if not 0 < self.fdr < 1:
            raise ValueError("fdr must lie in (0, 1)")
        if self.method not in ("ss", "ci"):
            raise ValueError("method must be 'ss' or 'ci'")


@dataclass(frozen=True, eq=False)
class CorrectionResult:
    """Per-leaf output of :func:`correct`, in tree leaf order."""

    labels: tuple
    p_raw: np.ndarray
    z: np.ndarray
    t_scores: np.ndarray
    p_ss: np.ndarray
    q_ss: np.ndarray
    rejected: np.ndarray
    t_star: float
    t_max: float
    fdr: float
    alpha_hat: float
    lambda_hat: float
    lambda0_hat: float
    method: str
    trace: BICTrace
    debiased: DebiasedFit
    scores: ScoreSystem
    gamma: float | None
    gamma_requested: float | None
    n_clamped: int
    warnings: tuple


def _align(tree: UltrametricTree, p, labels):
    """Reorder ``p`` into tree leaf order."""
    p = np.asarray(p, dtype=float)
    if labels is None:
        if p.shape != (tree.n_leaves,):
            raise LabelMismatchError(
                f"expected {tree.n_leaves} p-values, got {p.size}")
        return p
    labels = [str(x) for x in labels]
    if len(labels) != p.size:
        raise ValueError("labels and p-values differ in length")
    seen = {}
    for i, lab in enumerate(labels):
        if lab in seen:
            raise LabelMismatchError(f"duplicate feature label {lab!r}", [lab])
        seen[lab] = i
    unknown = [lab for lab in labels if lab not in tree._label_index]
    if unknown:
        raise LabelMismatchError(f"feature {unknown[0]!r} is not a leaf of the tree", unknown)
    missing = [lab for lab in tree.labels if lab not in seen]
    if missing:
        raise LabelMismatchError(f"tree leaf {missing[0]!r} has no p-value", missing)
    return p[[seen[lab] for lab in tree.labels]]


def correct(tree: UltrametricTree, p, labels=None, config: CorrectionConfig | None = None,
            trace: BICTrace | None = None, geom: TreeGeometry | None = None,
            U=None) -> CorrectionResult:
    """Tree-aware correction of one-sided p-values.

    Parameters
    ----------
    tree : UltrametricTree
    p : array_like
        p-values; small values indicate negative shifts of the z-score.
    labels : sequence of str, optional
        Feature labels of ``p``; if absent ``p`` must follow the tree leaf
        order.
    config : CorrectionConfig, optional
    trace : BICTrace, optional
        Reuse a grid search computed for the same tree and p-values.

    Returns
    -------
    CorrectionResult
    """
    cfg = config or CorrectionConfig()
    p_tree = _align(tree, p, labels)
    zs = p_to_z(p_tree, tree.labels)
    geom = geometry(tree) if geom is None else geom
    U = incidence(tree) if U is None else U
    warns: list = []
    if zs.n_clamped:
        warns.append(f"{zs.n_clamped} p-value(s) clamped into [{P_EPS:g}, 1 - {P_EPS:g}]")
    if trace is None:
        trace = bic_select(tree, zs.z, cfg.alpha_grid, cfg.lambda_grid, geom=geom, U=U,
                           options=cfg.solver)
    warns.extend(trace.warnings)
    a, l = trace.selected
    des: OUDesign = build_design(tree, geom, zs.z, trace.alphas[a], U=U)
    fit = ShiftFit(delta=trace.delta[a, l].copy(), objective=math.nan, iterations=0,
                   converged=bool(trace.converged[a, l]), lam=float(trace.lam[a, l]),
                   sigma_hat=float(trace.sigma[a, l]))
    if cfg.method == "ss":
        ss = score_system_ss(des.X, cfg.lambda_node)
    else:
        ss = score_system_ci(des.X, cfg.gamma)
    warns.extend(ss.warnings)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RuntimeWarning)
        dfit = debias(fit, ss, des.X, des.y, des.T)
    warns.extend(str(w.message) for w in caught)
    m = tree.n_leaves
    t_star = fdr_threshold(dfit.t_scores, cfg.fdr)
    q, rej = q_values(dfit.t_scores, dfit.p_ss, t_star, cfg.fdr)
    return CorrectionResult(
        labels=tree.labels, p_raw=p_tree, z=zs.z, t_scores=dfit.t_scores, p_ss=dfit.p_ss,
        q_ss=q, rejected=rej, t_star=t_star, t_max=fdr_t_max(m), fdr=cfg.fdr,
        alpha_hat=trace.alpha_hat, lambda_hat=trace.lambda_hat,
        lambda0_hat=trace.lambda0_hat, method=cfg.method, trace=trace, debiased=dfit,
        scores=ss, gamma=ss.gamma, gamma_requested=ss.gamma_requested,
        n_clamped=zs.n_clamped, warnings=tuple(warns))


# --------------------------------------------------------------------------
# baselines


def _step_up(p, factor):
    p = np.asarray(p, dtype=float)
    if p.ndim != 1:
        raise ValueError("p must be one-dimensional")
    if np.any(~np.isfinite(p)) or np.any((p < 0) | (p > 1)):
        raise ValueError("p-values must lie in [0, 1]")
    m = p.size
    if m == 0:
        return p.copy()
    order = np.argsort(p, kind="stable")
    raw = p[order] * (m * factor) / np.arange(1, m + 1)
    adj = np.minimum.accumulate(raw[::-1])[::-1]
    out = np.empty(m)
    out[order] = np.minimum(adj, 1.0)
    return out


def bh_adjust(p) -> np.ndarray:
    """Benjamini-Hochberg step-up adjusted p-values."""
    return _step_up(p, 1.0)


def by_adjust(p) -> np.ndarray:
    """Benjamini-Yekutieli adjusted p-values (BH scaled by ``H_m``)."""
    m = np.asarray(p).size
    h = float(np.sum(1.0 / np.arange(1, m + 1))) if m else 1.0
    return _step_up(p, h)
