"""Side-by-side comparison of H, RR and PRR on a dataset with known answers."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import ExposureIndex, GroundTruth
from .genetic import fmt
from .mcmc import exact_null
from .scoring import Scorer, prr_signal, score_prr, score_rr
from .tree import Cocktail


@dataclass
class ScoreTable:
    cocktails: list[Cocktail]
    n_c: np.ndarray
    x: np.ndarray
    h: np.ndarray
    rr: np.ndarray  # nan where undefined
    prr: np.ndarray
    prr_signal: np.ndarray
    is_true: np.ndarray

    def score(self, name: str) -> np.ndarray:
        return {"H": self.h, "RR": self.rr, "PRR": self.prr}[name]


def score_table(index: ExposureIndex, truth: GroundTruth, k: int = 2,
                scorer: Scorer | None = None) -> ScoreTable:
    """Every exposed size-k cocktail with its three scores and truth label."""
    scorer = scorer or Scorer(index)
    cocktails, h = exact_null(index, k, scorer=scorer)
    planted = {c for c in truth.planted if len(c) == k}
    n_c, x, rr, prr, sig = [], [], [], [], []
    for c in cocktails:
        counts = scorer.counts(c)
        n_c.append(counts.n_c)
        x.append(counts.x)
        r, p = score_rr(counts), score_prr(counts)
        rr.append(np.nan if r is None else r)
        prr.append(np.nan if p is None else p)
        sig.append(prr_signal(counts))
    return ScoreTable(
        cocktails, np.array(n_c), np.array(x), h, np.array(rr), np.array(prr),
        np.array(sig, dtype=bool), np.array([c in planted for c in cocktails], dtype=bool),
    )


def ranks(scores: np.ndarray) -> np.ndarray:
    """Competition rank (0 = best) of every entry; undefined scores rank last."""
    s = np.where(np.isnan(scores), -np.inf, scores)
    order = np.sort(s)[::-1]
    return np.searchsorted(-order, -s, side="left")


def rare_above_planted(table: ScoreTable, name: str, max_patients: int = 1) -> int:
    """Non-planted cocktails taken by at most ``max_patients`` patients that
    outscore the weakest planted cocktail under score ``name``."""
    s = np.where(np.isnan(table.score(name)), -np.inf, table.score(name))
    if not table.is_true.any():
        return 0
    worst = s[table.is_true].min()
    return int(((s > worst) & ~table.is_true & (table.n_c <= max_patients)).sum())


def pr_curve(scores: np.ndarray, labels: np.ndarray) -> list[tuple[float, float, float]]:
    """``(threshold, precision, recall)`` at every distinct score, best first."""
    s = np.where(np.isnan(scores), -np.inf, scores)
    order = np.argsort(-s, kind="stable")
    s, y = s[order], labels[order]
    tp = np.cumsum(y)
    n_pos = max(int(labels.sum()), 1)
    out = []
    for i in range(len(s)):
        if i + 1 < len(s) and s[i + 1] == s[i]:
            continue
        if s[i] == -np.inf:
            break
        out.append((float(s[i]), tp[i] / (i + 1), tp[i] / n_pos))
    return out


def write_score_table(table: ScoreTable, tree, path: str | Path) -> None:
    rows = sorted(
        zip(table.cocktails, table.n_c, table.x, table.h, table.rr, table.prr, table.prr_signal, table.is_true),
        key=lambda r: (-r[3], r[0]),
    )
    nan = lambda v: None if np.isnan(v) else float(v)  # noqa: E731
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cocktail_codes", "n_c", "x", "H", "rr", "prr", "prr_signal", "planted"])
        for c, n_c, x, h, rr, prr, sig, true in rows:
            w.writerow([tree.cocktail_codes(c), n_c, x, fmt(h), fmt(nan(rr)), fmt(nan(prr)), int(sig), int(true)])


def write_pr_curves(curves: dict[str, Sequence[tuple[float, float, float]]], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["score", "threshold", "precision", "recall"])
        for name, pts in curves.items():
            for t, p, r in pts:
                w.writerow([name, fmt(t), fmt(p), fmt(r)])
