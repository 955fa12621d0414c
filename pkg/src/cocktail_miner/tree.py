"""ATC hierarchy loading and tree-structural queries.

Nodes are numbered by a depth-first preorder walk with children visited in
lexicographic code order, so the subtree of ``v`` is exactly the id range
``[v, exit[v])``.  Level-1 groups are roots at depth 1; a virtual super-root
at depth 0 joins them but is never a node of the tree.
"""

from __future__ import annotations

import csv
import random
from bisect import bisect_left
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

ATC_LEVEL_LENGTHS = (1, 3, 4, 5, 7)

Cocktail = tuple  # sorted tuple of node ids


class TreeError(ValueError):
    """Raised when a tree file violates the ATC layout rules."""


def parent_code(code: str) -> str | None:
    """Return the immediate ATC prefix of ``code`` (None for level-1 codes)."""
    n = len(code)
    if n not in ATC_LEVEL_LENGTHS:
        raise TreeError(f"code {code!r} has invalid ATC length {n}")
    i = ATC_LEVEL_LENGTHS.index(n)
    return None if i == 0 else code[: ATC_LEVEL_LENGTHS[i - 1]]


@dataclass(frozen=True, eq=False)
class AtcTree:
    codes: tuple[str, ...]
    labels: tuple[str, ...]
    depth: np.ndarray
    parent: np.ndarray
    exit: np.ndarray
    children: tuple[tuple[int, ...], ...]
    depth_t: int
    code_to_id: dict = field(repr=False)
    # ancestors[v, j] = ancestor of v at depth j + 1, or -1 below v's depth
    ancestors: np.ndarray = field(repr=False)
    leaf_ids: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return len(self.codes)

    @property
    def n_nodes(self) -> int:
        return len(self.codes)

    @property
    def roots(self) -> list[int]:
        return [v for v in range(len(self)) if self.parent[v] < 0]

    @property
    def internal_ids(self) -> np.ndarray:
        return np.flatnonzero(self.exit - np.arange(len(self)) > 1)

    def is_leaf(self, v: int) -> bool:
        return self.exit[v] == v + 1

    def is_descendant(self, u: int, v: int) -> bool:
        """True when ``u`` lies in the subtree rooted at ``v`` (``u == v`` included)."""
        return v <= u < self.exit[v]

    def subtree(self, v: int) -> range:
        return range(v, int(self.exit[v]))

    def leaves_under(self, v: int) -> np.ndarray:
        lo = bisect_left(self.leaf_ids, v)
        hi = bisect_left(self.leaf_ids, int(self.exit[v]))
        return self.leaf_ids[lo:hi]

    def path_to_root(self, v: int) -> list[int]:
        out = []
        while v >= 0:
            out.append(v)
            v = int(self.parent[v])
        return out

    def eligible(self, min_depth: int = 1) -> np.ndarray:
        """Node ids selectable by the search operators."""
        return np.flatnonzero(self.depth >= min_depth)

    def node_id(self, code: str) -> int:
        try:
            return self.code_to_id[code]
        except KeyError:
            raise KeyError(f"unknown ATC code {code!r}") from None

    def cocktail_codes(self, cocktail: Iterable[int]) -> str:
        return ";".join(sorted(self.codes[v] for v in cocktail))

    def parse_cocktail(self, text: str) -> Cocktail:
        return make_cocktail(self.node_id(c) for c in text.split(";") if c)


def make_cocktail(nodes: Iterable[int]) -> Cocktail:
    c = tuple(sorted(set(int(v) for v in nodes)))
    if not c:
        raise ValueError("a cocktail needs at least one node")
    return c


def build_tree(rows: Iterable[tuple[str, str]]) -> AtcTree:
    """Build an :class:`AtcTree` from ``(code, label)`` rows in any order."""
    labels: dict[str, str] = {}
    for code, label in rows:
        code = code.strip()
        if code in labels:
            raise TreeError(f"duplicate ATC code {code!r}")
        parent_code(code)  # validates length
        labels[code] = label
    if not labels:
        raise TreeError("tree file has no nodes")

    kids: dict[str | None, list[str]] = {}
    for code in labels:
        p = parent_code(code)
        if p is not None and p not in labels:
            raise TreeError(f"orphan ATC code {code!r}: parent {p!r} is missing")
        kids.setdefault(p, []).append(code)
    for lst in kids.values():
        lst.sort()

    n = len(labels)
    codes: list[str] = []
    depth = np.zeros(n, dtype=np.int64)
    parent = np.full(n, -1, dtype=np.int64)
    exit_ = np.zeros(n, dtype=np.int64)
    children: list[list[int]] = [[] for _ in range(n)]
    # iterative preorder; an empty code closes a node's interval
    # iterative preorder; a negative marker closes a node's interval
    stack: list[tuple[str, int, int]] = [(c, -1, 1) for c in reversed(kids[None])]
    open_ids: list[int] = []
    while stack:
        code, par, d = stack.pop()
        if code == "":
            v = open_ids.pop()
            exit_[v] = len(codes)
            continue
        v = len(codes)
        codes.append(code)
        depth[v] = d
        parent[v] = par
        if par >= 0:
            children[par].append(v)
        open_ids.append(v)
        stack.append(("", -1, 0))
        for child in reversed(kids.get(code, [])):
            stack.append((child, v, d + 1))

    max_depth = int(depth.max())
    ancestors = np.full((n, max_depth), -1, dtype=np.int64)
    for v in range(n):
        p = int(parent[v])
        if p >= 0:
            ancestors[v, : depth[p]] = ancestors[p, : depth[p]]
        ancestors[v, depth[v] - 1] = v

    leaf_ids = np.flatnonzero(exit_ - np.arange(n) == 1)
    return AtcTree(
        codes=tuple(codes),
        labels=tuple(labels[c] for c in codes),
        depth=depth,
        parent=parent,
        exit=exit_,
        children=tuple(tuple(c) for c in children),
        # height in edges of the deepest root, floored at 1 so indels cost > 0
        depth_t=max(1, max_depth - 1),
        code_to_id={c: i for i, c in enumerate(codes)},
        ancestors=ancestors,
        leaf_ids=leaf_ids,
    )


def load_tree(path: str | Path) -> AtcTree:
    """Load a ``code,label`` CSV file."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "code" not in reader.fieldnames:
            raise TreeError(f"{path}: expected a 'code,label' header")
        rows = [(r["code"], r.get("label") or "") for r in reader]
    return build_tree(rows)


def write_tree(tree: AtcTree, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["code", "label"])
        for code, label in zip(tree.codes, tree.labels):
            w.writerow([code, label])


def lca_depth(tree: AtcTree, a, b):
    """Depth of the lowest common ancestor (0 for the virtual super-root).

    Works elementwise on integer arrays of node ids.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    anc_a = tree.ancestors[a]
    anc_b = tree.ancestors[b]
    return np.sum((anc_a == anc_b) & (anc_a >= 0), axis=-1)


def lca_cost(tree: AtcTree, a, b):
    """Larger of the two depth gaps from ``a`` and ``b`` to their LCA.

    Pairs under different roots meet at the super-root; their cost is capped at
    ``depth_t`` so a substitution never exceeds a deletion plus an insertion.
    Scalars in, int out; arrays in, array out.
    """
    da = tree.depth[a]
    db = tree.depth[b]
    cost = np.minimum(np.maximum(da, db) - lca_depth(tree, a, b), tree.depth_t)
    if np.ndim(cost) == 0:
        return int(cost)
    return cost


def neighbors(tree: AtcTree, v: int) -> tuple[int, ...]:
    p = int(tree.parent[v])
    return ((p,) if p >= 0 else ()) + tree.children[v]


def free_neighbors(tree: AtcTree, cocktail: Sequence[int], at: int, min_depth: int = 1) -> list[int]:
    """Parent and children of ``at`` that are not already in ``cocktail``."""
    members = set(cocktail)
    return [u for u in neighbors(tree, at) if u not in members and tree.depth[u] >= min_depth]


_LEVEL_ALPHABETS = (
    "ABCDGHJLMNPRSV",
    [f"{i:02d}" for i in range(1, 100)],
    "ABCDEFGHJKLMNPQRSTUVWXYZ",
    "ABCDEFGHJKLMNPQRSTUVWXYZ",
    [f"{i:02d}" for i in range(1, 100)],
)


def synthetic_tree_rows(n_nodes: int, seed: int = 0, n_roots: int = 3) -> list[tuple[str, str]]:
    """Generate an ATC-shaped tree with ``n_nodes`` codes, all leaves at level 5.

    Level sizes grow roughly like the real classification; every internal
    node gets at least one child.
    """
    rest = n_nodes - n_roots
    if n_roots < 1 or rest < 4 * n_roots:
        raise ValueError("n_nodes too small for a five-level tree")
    ratios = (1.0, 2.7, 6.0, 14.5)
    sizes = [max(n_roots, round(rest * r / sum(ratios))) for r in ratios[:-1]]
    for i in range(1, 3):
        sizes[i] = max(sizes[i], sizes[i - 1])
    sizes.append(rest - sum(sizes))
    if sizes[-1] < sizes[-2]:
        raise ValueError("n_nodes too small for a five-level tree")

    rng = random.Random(seed)
    level = [_LEVEL_ALPHABETS[0][i] for i in range(n_roots)]
    rows = [(c, f"group {c}") for c in level]
    for depth, size in enumerate(sizes, start=1):
        # one child per parent first, the remainder spread at random
        owners = list(level) + [rng.choice(level) for _ in range(size - len(level))]
        used: dict[str, int] = {}
        nxt = []
        for parent in sorted(owners):
            k = used.get(parent, 0)
            used[parent] = k + 1
            child = parent + _LEVEL_ALPHABETS[depth][k]
            rows.append((child, f"node {child}"))
            nxt.append(child)
        level = nxt
    return rows
