"""Ultrametric trees: Newick I/O, node ordering and derived geometry.

Nodes are indexed ``0 .. n-1`` with internal nodes first (``0`` is the
root) and the ``m`` leaves last.  Internal nodes are numbered by a stack
preorder that pushes children left to right, so the right-most subtree of a
node is numbered before its siblings; leaves keep their left-to-right
Newick order.  With this convention the tree
``(((T1:1,T2:1):1,T3:2):1,(T4:2,T5:2):1);`` gives::

    N1 = root, N2 = (T4,T5), N3 = ((T1,T2),T3), N4 = (T1,T2)

Every parent index is smaller than its children's indices, which lets
bottom-up passes simply walk the nodes in reverse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NewickSyntaxError, TreeValidationError

__all__ = [
    "UltrametricTree",
    "TreeGeometry",
    "parse_newick",
    "serialize_newick",
    "geometry",
    "incidence",
    "shrinkage_diag",
    "random_ultrametric_tree",
]

_DELIMS = set("(),:;[]")


@dataclass(frozen=True, eq=False)
class UltrametricTree:
    """Rooted ultrametric tree with branch lengths.

    Attributes
    ----------
    parent : ndarray of int, shape (n,)
        Parent index per node, ``-1`` for the root.
    lengths : ndarray of float, shape (n,)
        Branch length above each node (``0`` for the root).
    times : ndarray of float, shape (n,)
        Time from the root to each node.
    children : tuple of tuple of int
        Children of each node in Newick order.
    labels : tuple of str
        Leaf labels, in leaf (column) order.
    names : tuple of str
        Internal node names as written in the Newick text (may be empty).
    height : float
        Root-to-leaf time ``h`` (largest leaf time).
    eps_ultra : float
        Tolerance used when the tree was validated.
    """

    parent: np.ndarray
    lengths: np.ndarray
    times: np.ndarray
    children: tuple
    labels: tuple
    names: tuple
    height: float
    eps_ultra: float
    _label_index: dict = field(repr=False, default=None)

    def __post_init__(self):
        for arr in (self.parent, self.lengths, self.times):
            arr.setflags(write=False)
        object.__setattr__(self, "_label_index",
                           {lab: i for i, lab in enumerate(self.labels)})

    @property
    def n_nodes(self) -> int:
        return self.parent.shape[0]

    @property
    def n_leaves(self) -> int:
        return len(self.labels)

    @property
    def n_internal(self) -> int:
        return self.n_nodes - self.n_leaves

    def leaf_node(self, i: int) -> int:
        """Node index of leaf ``i``."""
        return self.n_internal + i

    def leaf_index(self, label: str) -> int:
        """Leaf position of ``label``; raises ``KeyError`` if absent."""
        return self._label_index[label]

    def node_name(self, j: int) -> str:
        """Display name: ``N<k>`` for internal nodes, the label for leaves."""
        k = self.n_internal
        return f"N{j + 1}" if j < k else self.labels[j - k]

    def parent_times(self) -> np.ndarray:
        """``t_pa(i)`` per node, with ``0`` for the root."""
        pt = np.zeros(self.n_nodes)
        pt[1:] = self.times[self.parent[1:]]
        return pt


@dataclass(frozen=True)
class TreeGeometry:
    """Pairwise leaf quantities.

    Attributes
    ----------
    mrca_time : ndarray, shape (m, m)
        Time from the root to the most recent common ancestor; ``h`` on the
        diagonal.
    distance : ndarray, shape (m, m)
        Patristic distance ``t_i + t_j - 2 t_ij``.
    height : float
    """

    mrca_time: np.ndarray
    distance: np.ndarray
    height: float

    @property
    def cophenetic(self) -> np.ndarray:
        """Cophenetic matrix; identical to ``distance`` on leaves."""
        return self.distance


# --------------------------------------------------------------------------
# assembly from a raw node list


def _assemble(names, lengths, kids, root, eps_ultra=None, positions=None):
    """Build an :class:`UltrametricTree` from an unordered node list.

    ``kids[v]`` lists the children of raw node ``v`` left to right and
    ``lengths[v]`` is ``None`` when missing.  ``positions`` (Newick offsets)
    only serve error messages.
    """
    def where(v):
        return f" (at position {positions[v]})" if positions is not None else ""

    leaves = []
    internal = []
    stack = [root]
    while stack:
        v = stack.pop()
        if kids[v]:
            internal.append(v)
            stack.extend(kids[v])
        elif v == root:
            raise TreeValidationError("tree has no leaves")
    # leaves in left-to-right order
    stack = [root]
    while stack:
        v = stack.pop()
        if kids[v]:
            stack.extend(reversed(kids[v]))
        else:
            leaves.append(v)

    order = internal + leaves
    new = {v: i for i, v in enumerate(order)}
    n = len(order)
    parent = np.full(n, -1, dtype=np.intp)
    blen = np.zeros(n)
    for v in order:
        for c in kids[v]:
            parent[new[c]] = new[v]
    for v in order[1:]:
        ell = lengths[v]
        label = names[v] or "<unnamed>"
        if ell is None:
            raise TreeValidationError(f"missing branch length above node {label!r}{where(v)}")
        if not math.isfinite(ell) or ell < 0:
            raise TreeValidationError(f"invalid branch length {ell!r} above node {label!r}{where(v)}")
        blen[new[v]] = ell

    labels = tuple(names[v] for v in leaves)
    seen = set()
    for v, lab in zip(leaves, labels):
        if not lab:
            raise TreeValidationError(f"leaf without a label{where(v)}")
        if lab in seen:
            raise TreeValidationError(f"duplicate leaf label {lab!r}{where(v)}")
        seen.add(lab)

    times = np.zeros(n)
    for i in range(1, n):
        times[i] = times[parent[i]] + blen[i]
    k = len(internal)
    leaf_t = times[k:]
    h = float(leaf_t.max())
    if h <= 0:
        raise TreeValidationError("tree height must be positive")
    tol = 1e-6 * h if eps_ultra is None else float(eps_ultra)
    bad = np.flatnonzero(np.abs(leaf_t - h) > tol)
    if bad.size:
        i = int(bad[0])
        raise TreeValidationError(
            f"tree is not ultrametric: leaf {labels[i]!r} at depth {leaf_t[i]:.10g}, "
            f"height {h:.10g}")

    children = tuple(tuple(new[c] for c in kids[v]) for v in order)
    inames = tuple(names[v] or "" for v in internal)
    return UltrametricTree(parent=parent, lengths=blen, times=times,
                           children=children, labels=labels, names=inames,
                           height=h, eps_ultra=tol)


# --------------------------------------------------------------------------
# Newick


def _read_label(text, i):
    """Return ``(label, next_index)`` starting at ``i``."""
    n = len(text)
    if i < n and text[i] == "'":
        out = []
        j = i + 1
        while True:
            if j >= n:
                raise NewickSyntaxError("unterminated quoted label", i)
            if text[j] == "'":
                if j + 1 < n and text[j + 1] == "'":
                    out.append("'")
                    j += 2
                    continue
                return "".join(out), j + 1
            out.append(text[j])
            j += 1
    j = i
    while j < n and text[j] not in _DELIMS and not text[j].isspace():
        j += 1
    return text[i:j], j


def _skip(text, i):
    """Skip whitespace and ``[...]`` comments."""
    n = len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
        elif c == "[":
            j = text.find("]", i)
            if j < 0:
                raise NewickSyntaxError("unterminated comment", i)
            i = j + 1
        else:
            break
    return i


def parse_newick(text: str, eps_ultra: float | None = None) -> UltrametricTree:
    """Parse a single rooted Newick tree.

    Parameters
    ----------
    text : str
        Newick string terminated by ``;``.  Every non-root edge needs a
        branch length; a root length is accepted and ignored.  Labels may be
        single-quoted and ``[...]`` comments are skipped.
    eps_ultra : float, optional
        Ultrametric tolerance on leaf depths; defaults to ``1e-6 * h``.

    Raises
    ------
    NewickSyntaxError
        Malformed text; carries the character offset.
    TreeValidationError
        Missing lengths, bad labels or a non-ultrametric tree.
    """
    names: list = []
    lengths: list = []
    kids: list = []
    pos: list = []

    def new_node(at):
        names.append(None)
        lengths.append(None)
        kids.append([])
        pos.append(at)
        return len(names) - 1

    n = len(text)
    i = _skip(text, 0)
    if i >= n:
        raise NewickSyntaxError("empty input", i)
    root = cur = new_node(i)
    stack: list = []
    while True:
        i = _skip(text, i)
        if i >= n:
            raise NewickSyntaxError("unexpected end of input, missing ';'", i)
        c = text[i]
        if c == "(":
            if kids[cur] or names[cur] is not None or lengths[cur] is not None:
                raise NewickSyntaxError("unexpected '('", i)
            stack.append(cur)
            cur = new_node(i + 1)
            kids[stack[-1]].append(cur)
            i += 1
        elif c == ",":
            if not stack:
                raise NewickSyntaxError("unexpected ','", i)
            cur = new_node(i + 1)
            kids[stack[-1]].append(cur)
            i += 1
        elif c == ")":
            if not stack:
                raise NewickSyntaxError("unbalanced ')'", i)
            cur = stack.pop()
            i += 1
        elif c == ";":
            if stack:
                raise NewickSyntaxError("unbalanced '(' before ';'", i)
            i = _skip(text, i + 1)
            if i < n:
                raise NewickSyntaxError("trailing characters after ';'", i)
            break
        elif c == ":":
            if lengths[cur] is not None:
                raise NewickSyntaxError("duplicate branch length", i)
            i = _skip(text, i + 1)
            j = i
            while j < n and (text[j] in "+-.eE" or text[j].isdigit()):
                j += 1
            try:
                lengths[cur] = float(text[i:j])
            except ValueError:
                raise NewickSyntaxError("invalid branch length", i) from None
            i = j
        elif c in "]":
            raise NewickSyntaxError("unexpected ']'", i)
        else:
            if names[cur] is not None or lengths[cur] is not None:
                raise NewickSyntaxError("unexpected label", i)
            names[cur], i = _read_label(text, i)
    names = [nm or "" for nm in names]
    return _assemble(names, lengths, kids, root, eps_ultra, positions=pos)


def serialize_newick(tree: UltrametricTree, digits: int = 10) -> str:
    """Write ``tree`` as Newick with ``digits`` significant digits on lengths."""
    fmt = f"%.{digits}g"
    k = tree.n_internal

    def label(j):
        raw = tree.labels[j - k] if j >= k else tree.names[j]
        if raw and (any(ch in _DELIMS or ch.isspace() or ch == "'" for ch in raw)):
            return "'" + raw.replace("'", "''") + "'"
        return raw

    out = []
    # iterative DFS emitting tokens; items are node ids or closing markers
    stack = [(0, False)]
    while stack:
        j, done = stack.pop()
        if isinstance(j, str):
            out.append(j)
            continue
        kids = tree.children[j]
        if kids and not done:
            stack.append((j, True))
            out.append("(")
            for pos, c in enumerate(reversed(kids)):
                stack.append((c, False))
                if pos < len(kids) - 1:
                    stack.append((",", False))
            continue
        if kids:
            out.append(")")
        out.append(label(j))
        if j != 0:
            out.append(":" + fmt % tree.lengths[j])
    return "".join(out) + ";"


# --------------------------------------------------------------------------
# geometry


def incidence(tree: UltrametricTree) -> np.ndarray:
    """Leaf-by-node incidence matrix ``U`` (``m x n``, float).

    ``U[i, j] = 1`` iff leaf ``i`` lies in the subtree rooted at node ``j``;
    the root column is all ones and leaf columns form an identity block.
    """
    m, n, k = tree.n_leaves, tree.n_nodes, tree.n_internal
    U = np.zeros((m, n))
    U[np.arange(m), k + np.arange(m)] = 1.0
    for j in range(k - 1, -1, -1):
        for c in tree.children[j]:
            U[:, j] += U[:, c]
    return U


def geometry(tree: UltrametricTree) -> TreeGeometry:
    """MRCA times and patristic distances between leaves."""
    m, k = tree.n_leaves, tree.n_internal
    h = tree.height
    mrca = np.zeros((m, m))
    clades = [None] * tree.n_nodes
    for j in range(tree.n_nodes - 1, -1, -1):
        if j >= k:
            clades[j] = np.array([j - k], dtype=np.intp)
            continue
        parts = [clades[c] for c in tree.children[j]]
        tj = tree.times[j]
        for a in range(len(parts)):
            for b in range(a + 1, len(parts)):
                mrca[np.ix_(parts[a], parts[b])] = tj
                mrca[np.ix_(parts[b], parts[a])] = tj
        clades[j] = np.concatenate(parts)
        for c in tree.children[j]:
            clades[c] = None
    np.fill_diagonal(mrca, h)
    lt = np.full(m, h)
    dist = lt[:, None] + lt[None, :] - 2.0 * mrca
    np.fill_diagonal(dist, 0.0)
    mrca.setflags(write=False)
    dist.setflags(write=False)
    return TreeGeometry(mrca_time=mrca, distance=dist, height=h)


def shrinkage_diag(tree: UltrametricTree, alpha: float) -> np.ndarray:
    """Shrinkage ``1 - exp(-alpha (h - t_pa(i)))`` per node (root uses ``t = 0``)."""
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    return -np.expm1(-alpha * (tree.height - tree.parent_times()))


def random_ultrametric_tree(m: int, rng: np.random.Generator,
                            height: float = 1.0, prefix: str = "T") -> UltrametricTree:
    """Kingman-coalescent tree on ``m`` leaves rescaled to ``height``.

    Leaves are labelled ``prefix + "1" .. prefix + str(m)``.
    """
    if m < 1:
        raise ValueError("need at least one leaf")
    names = [f"{prefix}{i + 1}" for i in range(m)]
    kids = [[] for _ in range(m)]
    age = [0.0] * m
    active = list(range(m))
    t = 0.0
    while len(active) > 1:
        r = len(active)
        t += rng.exponential(2.0 / (r * (r - 1)))
        a, b = rng.choice(r, size=2, replace=False)
        va, vb = active[a], active[b]
        names.append("")
        kids.append([va, vb])
        age.append(t)
        v = len(names) - 1
        active = [x for x in active if x not in (va, vb)] + [v]
    root = active[0]
    if m == 1:
        names.append("")
        kids.append([0])
        age.append(1.0)
        root = 1
    scale = height / age[root]
    lengths = [None] * len(names)
    for v, cs in enumerate(kids):
        for c in cs:
            lengths[c] = (age[v] - age[c]) * scale
    return _assemble(names, lengths, kids, root)
