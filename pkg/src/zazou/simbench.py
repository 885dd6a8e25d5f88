"""Synthetic differential-abundance benchmark.

A fixed base abundance matrix is repeatedly split into two random groups,
a set of taxa gets its group-B abundances multiplied by a fold change,
every taxon is tested with a Wilcoxon rank-sum test and the p-values are
corrected by each method under comparison.  The positive variant draws the
differentially abundant taxa as whole PAM clusters of the cophenetic
distance, the negative variant draws them uniformly.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr
from scipy.stats import rankdata

from .errors import InputError, ZazouError
from .inference import CorrectionConfig, bh_adjust, by_adjust, correct
from .tree import UltrametricTree, geometry, incidence

__all__ = [
    "AbundanceMatrix",
    "SimScenario",
    "BaseConfig",
    "PAMResult",
    "ReplicateMetrics",
    "CampaignResult",
    "METHODS",
    "FPR_GRID",
    "wilcoxon_test",
    "wilcoxon_rows",
    "pam_cluster",
    "make_base_matrix",
    "simulate_replicate",
    "evaluate",
    "auc_score",
    "run_replicate",
    "run_campaign",
    "default_cluster_count",
    "replicate_seed",
]

METHODS = ("Raw", "BH", "BY", "zazou-SS", "zazou-CI")
FPR_GRID = np.linspace(0.0, 1.0, 101)
CSV_COLUMNS = ("fc", "variant", "prop_da", "seed", "method", "tpr", "fdr", "auc",
               "replicate", "n_rejected", "status")


@dataclass(frozen=True, eq=False)
class AbundanceMatrix:
    """Taxa x samples abundances with a two-level sample grouping.

    ``groups`` holds 0 for group A and 1 for group B; it may be ``None``
    for a base matrix without group structure.
    """

    values: np.ndarray
    labels: tuple
    samples: tuple
    groups: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise InputError("abundances must be a 2-d array")
        if v.shape[0] != len(self.labels) or v.shape[1] != len(self.samples):
            raise InputError("abundance shape does not match labels and samples")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise InputError("abundances must be finite and non-negative")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "samples", tuple(self.samples))
        if self.groups is not None:
            g = np.asarray(self.groups, dtype=np.intp)
            if g.shape != (v.shape[1],) or not np.isin(g, (0, 1)).all():
                raise InputError("groups must be a 0/1 vector with one entry per sample")
            object.__setattr__(self, "groups", g)

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True)
class SimScenario:
    """One simulation setting.

    ``fc = 1`` is allowed and gives a null scenario.  ``k`` is the PAM
    cluster count of the positive variant (default ``round(m / 10)``).
    """

    fc: float = 10.0
    variant: str = "positive"
    prop_da: float = 0.1
    k: int | None = None

    def __post_init__(self):
        if not (math.isfinite(self.fc) and self.fc >= 1.0):
            raise InputError(f"fold change must be >= 1, got {self.fc!r}")
        if self.variant not in ("positive", "negative"):
            raise InputError(f"variant must be 'positive' or 'negative', got {self.variant!r}")
        if not 0.0 < self.prop_da <= 1.0:
            raise InputError(f"prop_da must lie in (0, 1], got {self.prop_da!r}")
        if self.k is not None and self.k < 2:
            raise InputError(f"cluster count must be at least 2, got {self.k!r}")


@dataclass(frozen=True)
class BaseConfig:
    """Log-normal base counts: ``x_ij ~ Poisson(exp(mu_i + sd * e_ij))``
    with taxon log-means ``mu_i ~ N(log_mean, log_mean_sd)``."""

    n_samples: int = 100
    log_mean: float = 0.0
    log_mean_sd: float = 1.5
    sd: float = 2.0


# --------------------------------------------------------------------------
# tests


def wilcoxon_rows(values, groups) -> np.ndarray:
    """Two-sided Wilcoxon rank-sum p-value for every row of ``values``.

    Normal approximation of the rank sum of group 1 with tie correction and
    a 0.5 continuity correction.  Rows with no spread get ``p = 1``.
    """
    v = np.asarray(values, dtype=float)
    if v.ndim == 1:
        v = v[None, :]
    g = np.asarray(groups).astype(bool)
    if g.shape != (v.shape[1],):
        raise InputError("one group entry per sample is required")
    n1 = int(g.sum())
    n0 = g.size - n1
    if n0 == 0 or n1 == 0:
        raise InputError("both groups must be nonempty")
    n = g.size
    ranks = rankdata(v, axis=1)
    w = ranks[:, g].sum(axis=1)
    mean = n1 * (n + 1) / 2.0
    ties = np.zeros(v.shape[0])
    srt = np.sort(v, axis=1)
    for i in range(v.shape[0]):
        _, cnt = np.unique(srt[i], return_counts=True)
        ties[i] = float(np.sum(cnt.astype(float) ** 3 - cnt))
    var = n0 * n1 / 12.0 * ((n + 1) - ties / (n * (n - 1)))
    p = np.ones(v.shape[0])
    ok = var > 0
    dev = np.maximum(np.abs(w[ok] - mean) - 0.5, 0.0)
    p[ok] = np.minimum(2.0 * ndtr(-dev / np.sqrt(var[ok])), 1.0)
    return p


def wilcoxon_test(x, groups) -> float:
    """Two-sided Wilcoxon rank-sum p-value of one taxon."""
    return float(wilcoxon_rows(np.asarray(x, dtype=float)[None, :], groups)[0])


# --------------------------------------------------------------------------
# clustering


@dataclass(frozen=True, eq=False)
class PAMResult:
    """k-medoids partition.

    Attributes
    ----------
    labels : ndarray of int
        Cluster of each point, numbered by position in ``medoids``.
    medoids : ndarray of int
    cost : float
        Sum of distances to the assigned medoid.
    history : tuple of float
        Cost after BUILD and after every accepted swap.
    """

    labels: np.ndarray
    medoids: np.ndarray
    cost: float
    history: tuple


def pam_cluster(distance, k: int, max_swaps: int = 1000) -> PAMResult:
    """Partitioning around medoids with the BUILD and SWAP phases.

    Ties are broken by the smallest index, so the result is deterministic.
    """
    D = np.asarray(distance, dtype=float)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise InputError("distance must be a square matrix")
    m = D.shape[0]
    if not 2 <= k < m:
        raise InputError(f"k must satisfy 2 <= k < m = {m}, got {k}")
    if not np.allclose(D, D.T) or np.any(np.diag(D) != 0):
        raise InputError("distance must be symmetric with a zero diagonal")

    medoids = [int(np.argmin(D.sum(axis=1)))]
    near = D[medoids[0]].copy()
    while len(medoids) < k:
        gain = np.maximum(near[None, :] - D, 0.0).sum(axis=1)
        gain[medoids] = -np.inf
        c = int(np.argmax(gain))
        medoids.append(c)
        near = np.minimum(near, D[c])
    history = [float(near.sum())]

    med = np.array(medoids, dtype=np.intp)
    for _ in range(max_swaps):
        Dm = D[med]
        order = np.argsort(Dm, axis=0, kind="stable")
        d1 = Dm[order[0], np.arange(m)]
        d2 = Dm[order[1], np.arange(m)]
        cur = float(d1.sum())
        free = np.setdiff1d(np.arange(m), med)
        best, best_i, best_h = cur, -1, -1
        for i in range(k):
            base = np.where(order[0] == i, d2, d1)
            cost = np.minimum(base[None, :], D[free]).sum(axis=1)
            j = int(np.argmin(cost))
            if cost[j] < best - 1e-12 * max(1.0, abs(cur)):
                best, best_i, best_h = float(cost[j]), i, int(free[j])
        if best_i < 0:
            break
        med[best_i] = best_h
        history.append(best)
    labels = np.argmin(D[med], axis=0)
    cost = float(D[med][labels, np.arange(m)].sum())
    return PAMResult(labels=labels, medoids=med, cost=cost, history=tuple(history))


def default_cluster_count(m: int) -> int:
    return min(max(2, int(round(m / 10))), m - 1)


# --------------------------------------------------------------------------
# simulation


def make_base_matrix(tree: UltrametricTree, rng: np.random.Generator,
                     config: BaseConfig | None = None) -> AbundanceMatrix:
    """Homogeneous Poisson log-normal counts for the leaves of ``tree``."""
    cfg = config or BaseConfig()
    if cfg.n_samples < 2:
        raise InputError("at least two samples are needed")
    m = tree.n_leaves
    mu = rng.normal(cfg.log_mean, cfg.log_mean_sd, size=m)
    rate = np.exp(mu[:, None] + cfg.sd * rng.standard_normal((m, cfg.n_samples)))
    counts = rng.poisson(rate).astype(float)
    samples = tuple(f"S{j + 1}" for j in range(cfg.n_samples))
    return AbundanceMatrix(values=counts, labels=tree.labels, samples=samples)


def _positive_set(cophenetic, n_da, k, rng):
    pam = pam_cluster(cophenetic, k)
    chosen = []
    for c in rng.permutation(k):
        chosen.extend(np.flatnonzero(pam.labels == c).tolist())
        if len(chosen) >= n_da:
            break
    return np.sort(np.array(chosen, dtype=np.intp))


def simulate_replicate(base: AbundanceMatrix, tree: UltrametricTree, scenario: SimScenario,
                       rng: np.random.Generator, cophenetic=None):
    """Draw groups and differentially abundant taxa, then apply the fold change.

    Samples are split at random into two groups of sizes ``floor(p / 2)``
    and ``ceil(p / 2)``.  The number of DA taxa is
    ``max(1, round(prop_da * m))``; the positive variant adds whole PAM
    clusters of the cophenetic distance in random order until that number
    is reached (so it may be exceeded), the negative variant samples taxa
    uniformly.

    Returns
    -------
    AbundanceMatrix
        Copy of ``base`` with groups set and group-B rows of DA taxa scaled.
    truth : ndarray of bool, shape (m,)
    """
    if base.labels != tree.labels:
        raise InputError("base matrix rows must follow the tree leaf order")
    m, p = base.shape
    n_da = max(1, int(round(scenario.prop_da * m)))
    if n_da > m:
        raise InputError("target DA proportion is unreachable")
    groups = np.zeros(p, dtype=np.intp)
    groups[rng.permutation(p)[: p // 2 + p % 2]] = 1
    if scenario.variant == "positive":
        k = scenario.k if scenario.k is not None else default_cluster_count(m)
        if not 2 <= k < m:
            raise InputError(f"cluster count {k} out of range for {m} taxa")
        if cophenetic is None:
            cophenetic = geometry(tree).cophenetic
        idx = _positive_set(cophenetic, n_da, k, rng)
    else:
        idx = np.sort(rng.choice(m, size=n_da, replace=False))
    truth = np.zeros(m, dtype=bool)
    truth[idx] = True
    vals = base.values.copy()
    vals[np.ix_(truth, groups == 1)] *= scenario.fc
    sim = AbundanceMatrix(values=vals, labels=base.labels, samples=base.samples, groups=groups)
    return sim, truth


# --------------------------------------------------------------------------
# metrics


@dataclass(frozen=True, eq=False)
class ReplicateMetrics:
    """Quality of one method on one replicate.

    ``roc`` holds the TPR at each point of :data:`FPR_GRID`.
    """

    method: str
    tpr: float
    fdr: float
    auc: float
    roc: np.ndarray
    n_rejected: int
    status: str = "ok"


def _badness_ranks(score, tiebreak):
    """Average ranks of ``(score, tiebreak)`` pairs, 1 = most significant."""
    order = np.lexsort((tiebreak, score))
    s, t = score[order], tiebreak[order]
    new = np.ones(s.size, dtype=bool)
    new[1:] = (s[1:] != s[:-1]) | (t[1:] != t[:-1])
    grp = np.cumsum(new) - 1
    pos = np.arange(1, s.size + 1, dtype=float)
    avg = np.bincount(grp, weights=pos) / np.bincount(grp)
    ranks = np.empty(s.size)
    ranks[order] = avg[grp]
    return ranks, order, grp


def auc_score(score, truth, tiebreak=None) -> float:
    """Probability that a true taxon ranks above a null one (ties count half).

    Lower ``score`` means more significant; ``tiebreak`` (also lower is
    better) orders equal scores.
    """
    score = np.asarray(score, dtype=float)
    truth = np.asarray(truth, dtype=bool)
    tb = np.zeros_like(score) if tiebreak is None else np.asarray(tiebreak, dtype=float)
    P = int(truth.sum())
    N = truth.size - P
    if P == 0 or N == 0:
        return math.nan
    ranks, _, _ = _badness_ranks(score, tb)
    return float((ranks[~truth].sum() - N * (N + 1) / 2.0) / (P * N))


def _roc(score, tiebreak, truth):
    _, order, grp = _badness_ranks(score, tiebreak)
    t = truth[order]
    P, N = int(truth.sum()), int((~truth).sum())
    if P == 0 or N == 0:
        return np.full(FPR_GRID.size, math.nan)
    last = np.r_[grp[1:] != grp[:-1], True]
    tp = np.cumsum(t)[last] / P
    fp = np.cumsum(~t)[last] / N
    fpr = np.r_[0.0, fp]
    tpr = np.r_[0.0, tp]
    # highest TPR reached at each distinct FPR
    uf, inv = np.unique(fpr, return_inverse=True)
    ut = np.zeros(uf.size)
    np.maximum.at(ut, inv, tpr)
    out = np.interp(FPR_GRID, uf, ut)
    out[0] = 0.0
    return out


def evaluate(method: str, rejected, score, raw_p, truth) -> ReplicateMetrics:
    """TPR, FDR, AUC and interpolated ROC of one method.

    Taxa are ranked by ``score`` (lower is more significant, NaN counts as
    1) with ties broken by the raw p-value.
    """
    rej = np.asarray(rejected, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    s = np.nan_to_num(np.asarray(score, dtype=float), nan=1.0)
    raw = np.asarray(raw_p, dtype=float)
    tp = int(np.sum(rej & truth))
    fp = int(np.sum(rej & ~truth))
    tpr = tp / truth.sum() if truth.any() else math.nan
    fdr = fp / max(tp + fp, 1)
    return ReplicateMetrics(method=method, tpr=float(tpr), fdr=float(fdr),
                            auc=auc_score(s, truth, raw), roc=_roc(s, raw, truth),
                            n_rejected=tp + fp)


def _failed(method, msg):
    return ReplicateMetrics(method=method, tpr=math.nan, fdr=math.nan, auc=math.nan,
                            roc=np.full(FPR_GRID.size, math.nan), n_rejected=0,
                            status=f"error: {msg}")


# --------------------------------------------------------------------------
# campaign


def run_replicate(tree: UltrametricTree, base: AbundanceMatrix, scenario: SimScenario,
                  seed: int, methods=METHODS, fdr: float = 0.05,
                  config: CorrectionConfig | None = None, cache=None):
    """Simulate one dataset and score every method on it.

    ``cache`` may hold precomputed ``geom``, ``U`` and ``cophenetic`` of
    ``tree``.  A failing zazou fit is reported in ``status`` instead of
    raising.
    """
    cache = cache or {}
    geom = cache.get("geom") or geometry(tree)
    U = cache.get("U")
    if U is None:
        U = incidence(tree)
    coph = cache.get("cophenetic")
    if coph is None:
        coph = geom.cophenetic
    rng = np.random.default_rng(seed)
    sim, truth = simulate_replicate(base, tree, scenario, rng, cophenetic=coph)
    p = wilcoxon_rows(sim.values, sim.groups)
    base_cfg = config or CorrectionConfig(fdr=fdr)
    out = []
    trace = None
    for meth in methods:
        if meth == "Raw":
            out.append(evaluate(meth, p <= fdr, p, p, truth))
        elif meth == "BH":
            q = bh_adjust(p)
            out.append(evaluate(meth, q <= fdr, q, p, truth))
        elif meth == "BY":
            q = by_adjust(p)
            out.append(evaluate(meth, q <= fdr, q, p, truth))
        elif meth in ("zazou-SS", "zazou-CI"):
            cfg = CorrectionConfig(fdr=fdr, method="ss" if meth == "zazou-SS" else "ci",
                                   alpha_grid=base_cfg.alpha_grid,
                                   lambda_grid=base_cfg.lambda_grid, gamma=base_cfg.gamma,
                                   lambda_node=base_cfg.lambda_node, solver=base_cfg.solver)
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    res = correct(tree, p, config=cfg, trace=trace, geom=geom, U=U)
            except (ZazouError, np.linalg.LinAlgError) as exc:
                out.append(_failed(meth, str(exc)))
                continue
            trace = res.trace
            out.append(evaluate(meth, res.rejected, res.q_ss, p, truth))
        else:
            raise InputError(f"unknown method {meth!r}")
    return out, truth


@dataclass(frozen=True, eq=False)
class CampaignResult:
    """Rows of a campaign plus per-row ROC samples.

    ``rows`` are dicts keyed by :data:`CSV_COLUMNS`; ``roc[i]`` belongs to
    ``rows[i]``.
    """

    rows: tuple
    roc: np.ndarray
    scenarios: tuple
    methods: tuple
    base_seed: int
    meta: dict = field(default_factory=dict)

    def summary(self) -> list:
        """Mean and quartiles of TPR, FDR and AUC per scenario and method,
        with the averaged ROC curve."""
        out = []
        for si, sc in enumerate(self.scenarios):
            for meth in self.methods:
                idx = [i for i, r in enumerate(self.rows)
                       if r["scenario"] == si and r["method"] == meth and r["status"] == "ok"]
                entry = {"fc": sc.fc, "variant": sc.variant, "prop_da": sc.prop_da,
                         "method": meth, "n_ok": len(idx)}
                for key in ("tpr", "fdr", "auc"):
                    v = np.array([self.rows[i][key] for i in idx], dtype=float)
                    v = v[np.isfinite(v)]
                    if v.size:
                        q1, med, q3 = np.percentile(v, [25, 50, 75])
                        entry[key] = {"mean": float(v.mean()), "q1": float(q1),
                                      "median": float(med), "q3": float(q3),
                                      "se": float(v.std(ddof=1) / math.sqrt(v.size))
                                      if v.size > 1 else math.nan}
                    else:
                        entry[key] = None
                roc = self.roc[idx] if idx else np.empty((0, FPR_GRID.size))
                entry["roc_mean"] = np.nanmean(roc, axis=0).tolist() if len(idx) else None
                out.append(entry)
        return out

    def mean(self, method: str, key: str, scenario: int = 0) -> float:
        v = [r[key] for r in self.rows
             if r["scenario"] == scenario and r["method"] == method and r["status"] == "ok"]
        v = np.array(v, dtype=float)
        v = v[np.isfinite(v)]
        return float(v.mean()) if v.size else math.nan


def replicate_seed(base_seed: int, scenario: int, replicate: int) -> int:
    """Per-replicate integer seed derived from ``(base_seed, scenario, replicate)``."""
    ss = np.random.SeedSequence([int(base_seed), int(scenario), int(replicate)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _job(args):
    tree, base, sc, seed, methods, fdr, config, cache = args
    try:
        return run_replicate(tree, base, sc, seed, methods, fdr, config, cache)
    except ZazouError as exc:
        return [_failed(mth, str(exc)) for mth in methods], None


def run_campaign(tree: UltrametricTree, scenarios, replicates: int, methods=METHODS,
                 seed: int = 0, base: AbundanceMatrix | None = None,
                 base_config: BaseConfig | None = None, fdr: float = 0.05,
                 config: CorrectionConfig | None = None, n_jobs: int = 1,
                 progress=None) -> CampaignResult:
    """Run ``replicates`` simulations for every scenario.

    The base matrix (drawn from ``seed`` unless given) and the tree are
    shared by all replicates; replicate ``r`` of scenario ``s`` uses
    :func:`replicate_seed` ``(seed, s, r)``, so results do not depend on
    ``n_jobs`` or on execution order.

    Parameters
    ----------
    progress : callable, optional
        Called as ``progress(done, total)`` after each replicate.
    """
    if replicates < 1:
        raise InputError("replicates must be at least 1")
    scenarios = tuple(scenarios)
    methods = tuple(methods)
    for meth in methods:
        if meth not in METHODS:
            raise InputError(f"unknown method {meth!r}")
    if base is None:
        base = make_base_matrix(tree, np.random.default_rng([int(seed), 2**31 - 1]), base_config)
    geom = geometry(tree)
    cache = {"geom": geom, "U": incidence(tree), "cophenetic": geom.cophenetic}
    jobs = []
    keys = []
    for si, sc in enumerate(scenarios):
        for r in range(replicates):
            s = replicate_seed(seed, si, r)
            jobs.append((tree, base, sc, s, methods, fdr, config, cache))
            keys.append((si, r, s))
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            results = list(ex.map(_job, jobs))
    else:
        results = []
        for i, job in enumerate(jobs):
            results.append(_job(job))
            if progress is not None:
                progress(i + 1, len(jobs))
    rows = []
    rocs = []
    for (si, r, s), (metrics, _) in zip(keys, results):
        sc = scenarios[si]
        for met in metrics:
            rows.append({"fc": sc.fc, "variant": sc.variant, "prop_da": sc.prop_da, "seed": s,
                         "method": met.method, "tpr": met.tpr, "fdr": met.fdr, "auc": met.auc,
                         "replicate": r, "n_rejected": met.n_rejected, "status": met.status,
                         "scenario": si})
            rocs.append(met.roc)
    return CampaignResult(rows=tuple(rows), roc=np.array(rocs).reshape(len(rows), FPR_GRID.size),
                          scenarios=scenarios, methods=methods, base_seed=int(seed),
                          meta={"m": tree.n_leaves, "n_samples": base.shape[1],
                                "replicates": replicates, "fdr": fdr})
