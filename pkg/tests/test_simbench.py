from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import mannwhitneyu

from zazou.errors import InputError
from zazou.inference import CorrectionConfig
from zazou.simbench import (FPR_GRID, METHODS, AbundanceMatrix, BaseConfig, SimScenario,
                            auc_score, default_cluster_count, evaluate, make_base_matrix,
                            pam_cluster, replicate_seed, run_campaign, run_replicate,
                            simulate_replicate, wilcoxon_rows, wilcoxon_test)
from zazou.tree import geometry, random_ultrametric_tree

FAST = CorrectionConfig(alpha_grid=(0.5, 2.0), lambda_grid=(1.0, 0.3, 0.1))


# -- containers ---------------------------------------------------------------

def test_scenario_validation():
    SimScenario(fc=1.0)
    for kw in (dict(fc=0.5), dict(fc=float("nan")), dict(variant="x"), dict(prop_da=0.0),
               dict(prop_da=1.5), dict(k=1)):
        with pytest.raises(InputError):
            SimScenario(**kw)


def test_abundance_validation():
    AbundanceMatrix(np.ones((2, 3)), ("a", "b"), ("s1", "s2", "s3"), groups=[0, 1, 1])
    with pytest.raises(InputError):
        AbundanceMatrix(np.ones((2, 3)), ("a",), ("s1", "s2", "s3"))
    with pytest.raises(InputError):
        AbundanceMatrix(-np.ones((2, 3)), ("a", "b"), ("s1", "s2", "s3"))
    with pytest.raises(InputError):
        AbundanceMatrix(np.ones((2, 3)), ("a", "b"), ("s1", "s2", "s3"), groups=[0, 2, 1])


# -- Wilcoxon -----------------------------------------------------------------

@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1), st.integers(4, 60), st.booleans())
def test_wilcoxon_matches_scipy(seed, n, discrete):
    rng = np.random.default_rng(seed)
    x = rng.poisson(2.0, n).astype(float) if discrete else rng.standard_normal(n)
    g = np.zeros(n, dtype=int)
    g[rng.permutation(n)[: n // 2]] = 1
    if np.ptp(x) == 0:
        assert wilcoxon_test(x, g) == 1.0
        return
    ref = mannwhitneyu(x[g == 1], x[g == 0], use_continuity=True, alternative="two-sided",
                       method="asymptotic").pvalue
    assert wilcoxon_test(x, g) == pytest.approx(ref, rel=1e-10, abs=1e-14)


def test_wilcoxon_rows_and_errors(rng):
    v = rng.standard_normal((5, 12))
    g = np.r_[np.zeros(6), np.ones(6)]
    rows = wilcoxon_rows(v, g)
    np.testing.assert_allclose(rows, [wilcoxon_test(r, g) for r in v])
    assert wilcoxon_rows(np.ones((1, 12)), g)[0] == 1.0
    with pytest.raises(InputError):
        wilcoxon_rows(v, np.zeros(12))
    with pytest.raises(InputError):
        wilcoxon_rows(v, np.zeros(5))


# -- PAM ----------------------------------------------------------------------

def cost(D, med):
    return D[list(med)].min(axis=0).sum()


def points(seed, m):
    x = np.random.default_rng(seed).standard_normal((m, 2))
    return np.sqrt(((x[:, None] - x[None]) ** 2).sum(-1))


@settings(max_examples=40)
@given(st.integers(0, 2**32 - 1), st.integers(4, 9), st.integers(2, 3))
def test_pam_is_swap_optimal(seed, m, k):
    k = min(k, m - 1)
    D = points(seed, m)
    res = pam_cluster(D, k)
    assert len(set(res.medoids.tolist())) == k
    assert res.cost == pytest.approx(cost(D, res.medoids))
    np.testing.assert_array_equal(res.labels, np.argmin(D[res.medoids], axis=0))
    assert np.all(np.diff(res.history) <= 1e-12)
    opt = min(cost(D, c) for c in itertools.combinations(range(m), k))
    assert res.cost >= opt - 1e-12
    # no single swap improves the result
    meds = res.medoids.tolist()
    for i, o in itertools.product(range(k), range(m)):
        if o in meds:
            continue
        trial = meds[:i] + [o] + meds[i + 1:]
        assert cost(D, trial) >= res.cost - 1e-9


def test_pam_recovers_separated_clusters():
    rng = np.random.default_rng(3)
    centres = np.array([[0, 0], [10, 0], [0, 10]])
    x = np.concatenate([c + 0.3 * rng.standard_normal((5, 2)) for c in centres])
    D = np.sqrt(((x[:, None] - x[None]) ** 2).sum(-1))
    res = pam_cluster(D, 3)
    opt = min(cost(D, c) for c in itertools.combinations(range(15), 3))
    assert res.cost == pytest.approx(opt)
    assert sorted(np.bincount(res.labels).tolist()) == [5, 5, 5]


def test_pam_errors():
    D = points(0, 5)
    with pytest.raises(InputError):
        pam_cluster(D, 5)
    with pytest.raises(InputError):
        pam_cluster(D, 1)
    bad = D.copy()
    bad[0, 1] += 1
    with pytest.raises(InputError):
        pam_cluster(bad, 2)


def test_default_cluster_count():
    assert default_cluster_count(50) == 5
    assert default_cluster_count(5) == 2
    assert default_cluster_count(3) == 2


# -- metrics ------------------------------------------------------------------

@given(st.lists(st.tuples(st.integers(0, 5), st.booleans()), min_size=2, max_size=40))
def test_auc_matches_pair_counts(items):
    score = np.array([s for s, _ in items], dtype=float)
    truth = np.array([t for _, t in items])
    if truth.all() or not truth.any():
        assert np.isnan(auc_score(score, truth))
        return
    pos, neg = score[truth], score[~truth]
    pairs = [(1.0 if a < b else 0.5 if a == b else 0.0) for a in pos for b in neg]
    assert auc_score(score, truth) == pytest.approx(np.mean(pairs))


def test_auc_tiebreak_and_roc():
    score = np.array([0.1, 0.1, 0.5, 0.9])
    truth = np.array([True, False, True, False])
    assert auc_score(score, truth) == pytest.approx(0.625)
    assert auc_score(score, truth, tiebreak=np.array([0.0, 1.0, 0, 0])) == pytest.approx(0.75)
    met = evaluate("x", score <= 0.1, score, np.array([0.0, 1.0, 0, 0]), truth)
    assert met.tpr == 0.5 and met.fdr == 0.5 and met.n_rejected == 2
    np.testing.assert_allclose(met.roc[[0, -1]], [0.0, 1.0])
    assert np.all(np.diff(met.roc) >= 0)
    assert met.roc.shape == FPR_GRID.shape


def test_perfect_ranking():
    truth = np.r_[np.ones(5, bool), np.zeros(10, bool)]
    score = np.r_[np.linspace(0, 0.01, 5), np.linspace(0.5, 1, 10)]
    met = evaluate("x", truth, score, score, truth)
    assert met.auc == 1.0
    np.testing.assert_allclose(met.roc[1:], 1.0)


def test_nan_scores_rank_last():
    truth = np.array([True, False, False])
    met = evaluate("x", np.zeros(3, bool), np.array([0.2, np.nan, 0.9]), np.ones(3), truth)
    assert met.auc == 1.0


# -- simulation ---------------------------------------------------------------

@pytest.fixture(scope="module")
def small_world():
    tree = random_ultrametric_tree(30, np.random.default_rng(1))
    base = make_base_matrix(tree, np.random.default_rng(2), BaseConfig(n_samples=21))
    return tree, base


def test_base_matrix(small_world):
    tree, base = small_world
    assert base.shape == (30, 21)
    assert base.labels == tree.labels
    assert np.all(base.values == np.round(base.values))


@pytest.mark.parametrize("variant", ["positive", "negative"])
def test_simulate_replicate(small_world, variant):
    tree, base = small_world
    sc = SimScenario(fc=5.0, variant=variant, prop_da=0.2, k=4)
    sim, truth = simulate_replicate(base, tree, sc, np.random.default_rng(9))
    assert np.bincount(sim.groups).tolist() == [10, 11]
    if variant == "negative":
        assert truth.sum() == 6
    else:
        assert truth.sum() >= 6
    b = sim.groups == 1
    np.testing.assert_array_equal(sim.values[np.ix_(truth, b)], 5.0 * base.values[np.ix_(truth, b)])
    np.testing.assert_array_equal(sim.values[~truth], base.values[~truth])
    np.testing.assert_array_equal(sim.values[:, ~b], base.values[:, ~b])


def test_positive_truth_is_union_of_clusters(small_world):
    tree, base = small_world
    sc = SimScenario(fc=5.0, variant="positive", prop_da=0.2, k=4)
    _, truth = simulate_replicate(base, tree, sc, np.random.default_rng(4))
    labels = pam_cluster(geometry(tree).cophenetic, 4).labels
    for c in range(4):
        inside = truth[labels == c]
        assert inside.all() or not inside.any()


def test_null_scenario_keeps_values(small_world):
    tree, base = small_world
    sim, _ = simulate_replicate(base, tree, SimScenario(fc=1.0), np.random.default_rng(0))
    np.testing.assert_array_equal(sim.values, base.values)


def test_replicate_seed():
    assert replicate_seed(0, 0, 0) == replicate_seed(0, 0, 0)
    assert len({replicate_seed(0, s, r) for s in range(3) for r in range(3)}) == 9


def test_run_replicate(small_world):
    tree, base = small_world
    mets, truth = run_replicate(tree, base, SimScenario(fc=10.0), 5, config=FAST)
    assert [m.method for m in mets] == list(METHODS)
    for m in mets:
        assert m.status == "ok"
        assert 0 <= m.auc <= 1
    with pytest.raises(InputError):
        run_replicate(tree, base, SimScenario(), 5, methods=("nope",))


def test_campaign_deterministic_and_parallel_safe(small_world):
    tree, _ = small_world
    scen = [SimScenario(fc=10.0), SimScenario(fc=10.0, variant="negative")]
    kw = dict(methods=("Raw", "BH", "zazou-SS"), seed=3, config=FAST,
              base_config=BaseConfig(n_samples=20))
    a = run_campaign(tree, scen, 2, **kw)
    b = run_campaign(tree, scen, 2, n_jobs=2, **kw)
    assert a.rows == b.rows
    np.testing.assert_array_equal(a.roc, b.roc)
    assert len(a.rows) == 2 * 2 * 3
    summ = a.summary()
    assert len(summ) == 6 and summ[0]["n_ok"] == 2
    assert a.mean("BH", "auc", 1) == pytest.approx(
        np.mean([r["auc"] for r in a.rows if r["method"] == "BH" and r["scenario"] == 1]))
    with pytest.raises(InputError):
        run_campaign(tree, scen, 0)
