"""Hypergeometric risk score, 2x2-table baselines, and penalized fitness."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from .dataset import ExposureIndex
from .distance import similarity
from .tree import Cocktail


@dataclass(frozen=True)
class CocktailCounts:
    n: int
    k: int
    n_c: int
    x: int

    def __post_init__(self):
        if not (0 <= self.x <= self.n_c <= self.n and self.x <= self.k <= self.n):
            raise ValueError(f"inconsistent counts {self}")


def log_factorials(n: int) -> np.ndarray:
    """``ln m!`` for ``m = 0..n``."""
    return gammaln(np.arange(n + 1, dtype=np.float64) + 1.0)


def hypergeom_log_sf(n: int, k: int, n_c: int, x: int, logfact: np.ndarray | None = None) -> float:
    """``ln P(X >= x)`` for ``X ~ Hypergeometric(population n, k successes, n_c draws)``.

    The tail is summed in log space over ``m = x .. min(n_c, k)`` from the
    log PMF ``ln C(k, m) + ln C(n - k, n_c - m) - ln C(n, n_c)``.
    """
    if x <= max(0, n_c + k - n):
        return 0.0  # the whole support lies at or above x
    hi = min(n_c, k)
    if x > hi:
        return -math.inf
    if logfact is None or len(logfact) <= n:
        logfact = log_factorials(n)
    m = np.arange(x, hi + 1)
    lf = logfact
    log_pmf = (
        lf[k] - lf[m] - lf[k - m]
        + lf[n - k] - lf[n_c - m] - lf[n - k - n_c + m]
        - (lf[n] - lf[n_c] - lf[n - n_c])
    )
    top = log_pmf.max()
    return min(0.0, float(top + math.log(np.exp(log_pmf - top).sum())))


def score_h(counts: CocktailCounts, logfact: np.ndarray | None = None) -> float:
    """``H = -ln P(X >= x)``; zero when no exposed patient has the AE."""
    if counts.x == 0:
        return 0.0
    return -hypergeom_log_sf(counts.n, counts.k, counts.n_c, counts.x, logfact) + 0.0


def score_rr(counts: CocktailCounts) -> float | None:
    """Relative risk ``(x / n_c) / (K / N)``; None when undefined."""
    if counts.n_c == 0 or counts.k == 0:
        return None
    return (counts.x / counts.n_c) / (counts.k / counts.n)


def score_prr(counts: CocktailCounts) -> float | None:
    """Proportional reporting ratio ``(x / n_c) / ((K - x) / (N - n_c))``."""
    rest = counts.n - counts.n_c
    if counts.n_c == 0 or rest == 0 or counts.k == counts.x:
        return None
    return (counts.x / counts.n_c) / ((counts.k - counts.x) / rest)


def prr_signal(counts: CocktailCounts, threshold: float = 2.0, min_cases: int = 3) -> bool:
    """Conventional PRR signal rule: ``PRR >= threshold`` with at least ``min_cases`` cases.

    A cocktail whose comparator has no AE case (PRR undefined) signals when it
    has enough cases of its own.
    """
    if counts.x < min_cases:
        return False
    prr = score_prr(counts)
    if prr is None:
        return counts.n_c < counts.n
    return prr >= threshold


class Scorer:
    """Scores cocktails against one exposure index, memoizing H per ``(n_c, x)``."""

    def __init__(self, index: ExposureIndex):
        self.index = index
        self.n = index.n_patients
        self.k = index.n_ae
        self.logfact = log_factorials(self.n)
        self._h: dict[tuple[int, int], float] = {}

    def h_from_counts(self, n_c: int, x: int) -> float:
        key = (n_c, x)
        h = self._h.get(key)
        if h is None:
            h = 0.0 if x == 0 else -hypergeom_log_sf(self.n, self.k, n_c, x, self.logfact) + 0.0
            self._h[key] = h
        return h

    def counts(self, cocktail: Sequence[int]) -> CocktailCounts:
        n_c, x = self.index.counts(cocktail)
        return CocktailCounts(self.n, self.k, n_c, x)

    def h(self, cocktail: Sequence[int]) -> float:
        return self.h_from_counts(*self.index.counts(cocktail))

    def evaluate(self, cocktail: Sequence[int]) -> tuple[int, int, float]:
        n_c, x = self.index.counts(cocktail)
        return n_c, x, self.h_from_counts(n_c, x)

    def scored(self, cocktail: Cocktail) -> "ScoredCocktail":
        counts = self.counts(cocktail)
        return ScoredCocktail(
            cocktail=cocktail,
            counts=counts,
            h=self.h_from_counts(counts.n_c, counts.x),
            rr=score_rr(counts),
            prr=score_prr(counts),
        )


@dataclass
class ScoredCocktail:
    cocktail: Cocktail
    counts: CocktailCounts
    h: float
    rr: float | None = None
    prr: float | None = None
    pvalue: float | None = None
    cluster: int | None = None

    @property
    def prr_signal(self) -> bool:
        return prr_signal(self.counts)


def penalized_scores(h: np.ndarray, similarity: np.ndarray) -> np.ndarray:
    """Divide each score by its summed similarity to the whole population.

    ``similarity`` is the population-by-population matrix; its unit diagonal
    keeps every denominator at least 1.
    """
    return np.asarray(h, dtype=float) / similarity.sum(axis=1)


def score_hpen(target: Cocktail, population: Sequence[Cocktail], scorer: Scorer) -> float:
    """Penalized score of one population member."""
    if target not in population:
        raise ValueError("target must belong to the population")
    tree = scorer.index.tree
    denom = sum(similarity(tree, target, c) for c in population)
    return scorer.h(target) / denom
