"""Unordered edit distance between cocktails and the derived similarity.

A substitution ``a -> b`` costs :func:`~cocktail_miner.tree.lca_cost`;
inserting or deleting a node costs ``depth_t / 2``.  Because a substitution
never costs more than a deletion plus an insertion, the cheapest
transformation matches every node of the smaller cocktail to a distinct node
of the larger one and inserts the rest, which is a rectangular assignment
problem.
"""

from __future__ import annotations

import csv
import itertools
import math
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .tree import AtcTree, Cocktail, lca_cost

# above this many injections a pair falls back to the Hungarian solver
_MAX_INJECTIONS = 5040


def _pair_costs(tree: AtcTree, small: Sequence[int], large: Sequence[int]) -> np.ndarray:
    a = np.asarray(small)[:, None]
    b = np.asarray(large)[None, :]
    return lca_cost(tree, a, b).astype(float)


def cocktail_distance(tree: AtcTree, c1: Sequence[int], c2: Sequence[int]) -> float:
    """Minimum cost of turning ``c1`` into ``c2``."""
    small, large = (c1, c2) if len(c1) <= len(c2) else (c2, c1)
    indel = tree.depth_t / 2
    cost = _pair_costs(tree, small, large)
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum()) + (len(large) - len(small)) * indel


def similarity(tree: AtcTree, c1: Sequence[int], c2: Sequence[int]) -> float:
    """``1 - 2 d / ((n1 + n2) depth_t)``, in [0, 1]."""
    d = cocktail_distance(tree, c1, c2)
    return 1.0 - 2.0 * d / ((len(c1) + len(c2)) * tree.depth_t)


@lru_cache(maxsize=None)
def _injections(ns: int, nl: int) -> np.ndarray:
    return np.array(list(itertools.permutations(range(nl), ns)), dtype=np.intp).reshape(-1, ns)


def _group_distances(tree: AtcTree, small: np.ndarray, large: np.ndarray) -> np.ndarray:
    """Distances for ``G`` pairs given as ``(G, ns)`` and ``(G, nl)`` node arrays."""
    g, ns = small.shape
    nl = large.shape[1]
    indel_total = (nl - ns) * tree.depth_t / 2
    cost = lca_cost(tree, small[:, :, None], large[:, None, :])
    if math.perm(nl, ns) > _MAX_INJECTIONS:
        out = np.empty(g)
        for i in range(g):
            r, c = linear_sum_assignment(cost[i])
            out[i] = cost[i][r, c].sum()
        return out + indel_total
    perms = _injections(ns, nl)
    out = np.empty(g)
    rows = np.arange(ns)
    chunk = max(1, 4_000_000 // (len(perms) * ns))
    for start in range(0, g, chunk):
        sub = cost[start:start + chunk]
        # (chunk, n_perms, ns) gathered costs, summed per injection
        totals = sub[:, rows[None, :], perms].sum(axis=2)
        out[start:start + chunk] = totals.min(axis=1)
    return out + indel_total


def distance_matrix(tree: AtcTree, cocktails: Sequence[Sequence[int]]) -> np.ndarray:
    """Symmetric matrix of pairwise cocktail distances with a zero diagonal."""
    n = len(cocktails)
    if n == 0:
        raise ValueError("need at least one cocktail")
    out = np.zeros((n, n))
    by_size: dict[int, list[int]] = {}
    for i, c in enumerate(cocktails):
        by_size.setdefault(len(c), []).append(i)
    arrays = {s: np.array([cocktails[i] for i in idx], dtype=np.intp) for s, idx in by_size.items()}
    index = {s: np.array(idx, dtype=np.intp) for s, idx in by_size.items()}
    sizes = sorted(by_size)
    for a, s1 in enumerate(sizes):
        for s2 in sizes[a:]:
            i1, i2 = index[s1], index[s2]
            if s1 == s2:
                p, q = np.triu_indices(len(i1), k=1)
            else:
                p, q = (m.ravel() for m in np.meshgrid(np.arange(len(i1)), np.arange(len(i2)), indexing="ij"))
            if len(p) == 0:
                continue
            d = _group_distances(tree, arrays[s1][p], arrays[s2][q])
            out[i1[p], i2[q]] = d
            out[i2[q], i1[p]] = d
    return out


def similarity_matrix(tree: AtcTree, cocktails: Sequence[Sequence[int]], dist: np.ndarray | None = None) -> np.ndarray:
    if dist is None:
        dist = distance_matrix(tree, cocktails)
    sizes = np.array([len(c) for c in cocktails], dtype=float)
    return 1.0 - 2.0 * dist / ((sizes[:, None] + sizes[None, :]) * tree.depth_t)


def similarity_sums(tree: AtcTree, population: Sequence[Cocktail]) -> np.ndarray:
    """For each member, its summed similarity to every member (itself included).

    Duplicates are collapsed before the pairwise work and counted back in.
    """
    uniq: dict[Cocktail, int] = {}
    slot = []
    for c in population:
        slot.append(uniq.setdefault(c, len(uniq)))
    keys = list(uniq)
    mult = np.bincount(slot, minlength=len(keys)).astype(float)
    sums = similarity_matrix(tree, keys) @ mult
    return sums[np.asarray(slot)]


def write_distance_matrix(path: str | Path, labels: Sequence[str], dist: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cocktail", *labels])
        for label, row in zip(labels, dist):
            w.writerow([label, *(f"{v:.6g}" for v in row)])
