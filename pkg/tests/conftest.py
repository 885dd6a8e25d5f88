from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from zazou.tree import parse_newick

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

FIVE_TAXA = "(((T1:1,T2:1):1,T3:2):1,(T4:2,T5:2):1);"


@pytest.fixture
def five_taxa_tree():
    return parse_newick(FIVE_TAXA)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def cli_inputs(tmp_path):
    """Tree and p-value files for a 30-taxon problem with one shifted clade."""
    from zazou.tree import incidence, random_ultrametric_tree, serialize_newick

    gen = np.random.default_rng(7)
    tree = random_ultrametric_tree(30, gen)
    U = incidence(tree)
    sizes = U[:, 1: tree.n_internal].sum(0)
    clade = 1 + int(np.argmin(np.abs(sizes - 6)))
    p = gen.uniform(size=30)
    hit = U[:, clade] == 1
    p[hit] = gen.uniform(0, 1e-8, hit.sum())
    (tmp_path / "tree.nwk").write_text(serialize_newick(tree) + "\n")
    lines = ["feature_id,p_value"] + [f"{lab},{float(v)!r}" for lab, v in zip(tree.labels, p)]
    (tmp_path / "p.csv").write_text("\n".join(lines) + "\n")
    return tmp_path / "tree.nwk", tmp_path / "p.csv"


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def criterion(request):
    """``criterion(n, ok, detail)`` records one PASS/FAIL line for the summary."""

    def record(n, ok, detail):
        line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.stash[_ACCEPTANCE].append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
