"""Density clustering of result cocktails on their edit-distance matrix."""

from __future__ import annotations

import csv
import re
from collections import deque
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import DataError

NOISE = -1
_PREFIX = re.compile(r"^[A-Z][0-9A-Z]{0,6}$")


def dbscan(dist: np.ndarray, eps: float, min_pts: int) -> np.ndarray:
    """Label each item with a cluster id (0, 1, ...) or ``NOISE``.

    A point is core when at least ``min_pts`` points, itself included, lie
    within ``eps``.  Clusters grow from cores in index order, so a border
    point joins the first cluster that reaches it.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if min_pts < 1:
        raise ValueError("min_pts must be at least 1")
    dist = np.asarray(dist)
    n = len(dist)
    near = [np.flatnonzero(row <= eps) for row in dist]
    core = np.array([len(nb) >= min_pts for nb in near], dtype=bool)
    labels = np.full(n, NOISE, dtype=int)
    cid = 0
    for i in range(n):
        if labels[i] != NOISE or not core[i]:
            continue
        labels[i] = cid
        queue = deque([i])
        while queue:
            p = queue.popleft()
            for q in near[p]:
                if labels[q] == NOISE:
                    labels[q] = cid
                    if core[q]:
                        queue.append(q)
        cid += 1
    return labels


def default_eps(dist: np.ndarray, q: float = 25.0) -> float:
    """The ``q``-th percentile of the nonzero off-diagonal distances."""
    iu = np.triu_indices(len(dist), k=1)
    vals = dist[iu]
    vals = vals[vals > 0]
    return float(np.percentile(vals, q)) if len(vals) else 1.0


def k_distance(dist: np.ndarray, k: int) -> np.ndarray:
    """Distance from each point to its k-th closest point (itself counted), sorted descending."""
    k = min(k, len(dist))
    kth = np.sort(dist, axis=1)[:, k - 1]
    return np.sort(kth)[::-1]


def embed_2d(dist: np.ndarray) -> np.ndarray:
    """Classical multidimensional scaling to two coordinates (for plotting only)."""
    d = np.asarray(dist, dtype=float)
    n = len(d)
    j = np.eye(n) - 1.0 / n
    b = -0.5 * j @ (d ** 2) @ j
    vals, vecs = np.linalg.eigh((b + b.T) / 2)
    order = np.argsort(vals)[::-1][:2]
    coords = np.zeros((n, 2))
    for col, idx in enumerate(order):
        lam = vals[idx]
        if lam <= 1e-12 * max(1.0, abs(vals).max()):
            continue
        v = vecs[:, idx]
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        coords[:, col] = v * np.sqrt(lam)
    return coords


def read_tags(path: str | Path) -> list[tuple[str, str]]:
    """``family,prefix`` rows; a family may span several prefixes."""
    tags = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if not {"family", "prefix"} <= set(reader.fieldnames or ()):
            raise DataError(f"{path}: expected a 'family,prefix' header")
        for row in reader:
            prefix = row["prefix"].strip()
            if not _PREFIX.match(prefix):
                raise DataError(f"{path}: bad ATC prefix {prefix!r} for family {row['family']!r}")
            tags.append((row["family"].strip(), prefix))
    return tags


def families_of(codes: Sequence[str], tags: Sequence[tuple[str, str]]) -> list[str]:
    """Families (in order of first appearance in the tag file) with a prefix matching any of ``codes``."""
    hit = {family for family, prefix in tags if any(c.startswith(prefix) for c in codes)}
    return [f for f in family_names(tags) if f in hit]


def family_names(tags: Sequence[tuple[str, str]]) -> list[str]:
    return list(dict.fromkeys(f for f, _ in tags))


def cluster_report(cocktail_codes: Sequence[Sequence[str]], labels: Sequence[int],
                   tags: Sequence[tuple[str, str]] = ()) -> list[dict]:
    """Per-cluster size and per-family counts of member cocktails, by cluster id."""
    names = family_names(tags)
    rows: dict[int, dict] = {}
    for codes, lab in zip(cocktail_codes, labels):
        row = rows.setdefault(int(lab), {"cluster": int(lab), "n_cocktails": 0, **{f: 0 for f in names}})
        row["n_cocktails"] += 1
        for f in families_of(codes, tags):
            row[f] += 1
    return [rows[c] for c in sorted(rows)]


def write_cluster_report(rows: list[dict], tags: Sequence[tuple[str, str]], path: str | Path) -> None:
    cols = ["cluster", "n_cocktails", *family_names(tags)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
