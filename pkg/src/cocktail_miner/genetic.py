"""Genetic search over variable-size cocktails of ATC nodes."""

from __future__ import annotations

import csv
import logging
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .dataset import DataError, ExposureIndex
from .distance import similarity_sums
from .scoring import CocktailCounts, Scorer, score_prr, score_rr
from .tree import AtcTree, Cocktail, free_neighbors, make_cocktail

log = logging.getLogger(__name__)


@dataclass
class GaConfig:
    population_size: int = 100
    tournament_size: int = 3
    alpha: float = 1.0
    iterations: int = 100
    crossover_prob: float = 0.7
    mutation_prob: float = 1.0
    local_mutation_prob: float = 0.5
    elitism: int = 2
    init_lambda: float = 2.0
    selection: str = "penalized"  # or "raw"
    min_depth: int = 1
    min_patients: int = 1
    seed: int = 0

    def validate(self) -> None:
        m = self.population_size
        if m < 2:
            raise ValueError("population_size must be at least 2")
        if not 2 <= self.tournament_size <= m:
            raise ValueError("tournament_size must lie in [2, population_size]")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        for name in ("crossover_prob", "mutation_prob", "local_mutation_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if not 0 <= self.elitism < m:
            raise ValueError("elitism must lie in [0, population_size)")
        if self.iterations < 0:
            raise ValueError("iterations must be non-negative")
        if self.selection not in ("penalized", "raw"):
            raise ValueError("selection must be 'penalized' or 'raw'")


@dataclass
class ArchiveEntry:
    n_c: int
    x: int
    h: float
    iteration: int
    run_id: int = 0
    # filled when read back from a file, where N and K are no longer at hand
    rr: float | None = None
    prr: float | None = None


@dataclass
class Archive:
    """Every exposed cocktail seen by one or more runs, keyed by the cocktail."""

    entries: dict[Cocktail, ArchiveEntry] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, c) -> bool:
        return c in self.entries

    def add(self, c: Cocktail, entry: ArchiveEntry) -> None:
        old = self.entries.get(c)
        if old is None or entry.h > old.h or (
            entry.h == old.h and (entry.run_id, entry.iteration) < (old.run_id, old.iteration)
        ):
            self.entries[c] = entry

    def merge(self, other: "Archive") -> None:
        for c, e in other.entries.items():
            self.add(c, e)

    def ranked(self) -> list[tuple[Cocktail, ArchiveEntry]]:
        return sorted(self.entries.items(), key=lambda kv: (-kv[1].h, kv[0]))

    def best_h(self) -> float:
        return max((e.h for e in self.entries.values()), default=0.0)

    def sizes(self) -> list[int]:
        return sorted({len(c) for c in self.entries})


ARCHIVE_COLUMNS = ["cocktail_codes", "n_c", "x", "H", "rr", "prr", "iteration_found", "run_id"]


def fmt(v: float | None) -> str:
    """Fixed 6-significant-digit rendering; undefined values become empty fields."""
    if v is None:
        return ""
    return f"{v:.6g}"


def write_archive(archive: Archive, tree: AtcTree, n: int, k: int, path: str | Path) -> None:
    rows = []
    for c, e in archive.entries.items():
        counts = CocktailCounts(n, k, e.n_c, e.x)
        rows.append((tree.cocktail_codes(c), e, score_rr(counts), score_prr(counts)))
    rows.sort(key=lambda r: (-r[1].h, r[0]))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ARCHIVE_COLUMNS)
        for codes, e, rr, prr in rows:
            w.writerow([codes, e.n_c, e.x, fmt(e.h), fmt(rr), fmt(prr), e.iteration, e.run_id])


def _opt_float(text: str) -> float | None:
    return float(text) if text.strip() else None


def read_archive(path: str | Path, tree: AtcTree) -> Archive:
    archive = Archive()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(ARCHIVE_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"{path}: missing columns {sorted(missing)}")
        unknown = set()
        for row in reader:
            codes = row["cocktail_codes"].split(";")
            unknown.update(c for c in codes if c not in tree.code_to_id)
            if unknown:
                continue
            archive.add(
                make_cocktail(tree.code_to_id[c] for c in codes),
                ArchiveEntry(int(row["n_c"]), int(row["x"]), float(row["H"]),
                             int(row["iteration_found"]), int(row["run_id"]),
                             _opt_float(row["rr"]), _opt_float(row["prr"])),
            )
    if unknown:
        raise DataError(f"{path}: codes not in the tree: {', '.join(sorted(unknown)[:20])}")
    return archive


# --------------------------------------------------------------------------
# operators


def crossover(x: Cocktail, y: Cocktail, tree: AtcTree, rng: random.Random,
              v: int | None = None) -> tuple[Cocktail, Cocktail]:
    """Swap the parts of ``x`` and ``y`` that fall in the subtree of an internal node.

    ``v`` defaults to a uniformly drawn internal node.  An offspring left empty
    is replaced by its parent.
    """
    if v is None:
        internal = tree.internal_ids
        if len(internal) == 0:
            return x, y
        v = int(internal[rng.randrange(len(internal))])
    lo, hi = v, int(tree.exit[v])
    sx = [a for a in x if lo <= a < hi]
    sy = [a for a in y if lo <= a < hi]
    x2 = tuple(sorted([a for a in x if not lo <= a < hi] + sy)) or x
    y2 = tuple(sorted([a for a in y if not lo <= a < hi] + sx)) or y
    return x2, y2


def mutate_local(c: Cocktail, tree: AtcTree, rng: random.Random, min_depth: int = 1) -> Cocktail:
    """Move one random member to a random free neighbour (unchanged if it has none)."""
    at = c[rng.randrange(len(c))]
    free = free_neighbors(tree, c, at, min_depth)
    if not free:
        return c
    new = free[rng.randrange(len(free))]
    return tuple(sorted([a for a in c if a != at] + [new]))


def mutate_add_delete(c: Cocktail, tree: AtcTree, rng: random.Random, alpha: float,
                      eligible: Sequence[int] | None = None) -> Cocktail:
    """Add a uniform node with probability ``min(1, alpha / k)``, else drop a uniform member."""
    k = len(c)
    if rng.random() < min(1.0, alpha / k):
        pool = eligible if eligible is not None else range(len(tree))
        if k >= len(pool):
            return c
        members = set(c)
        while True:
            new = int(pool[rng.randrange(len(pool))])
            if new not in members:
                return tuple(sorted(c + (new,)))
    if k == 1:
        return c
    drop = rng.randrange(k)
    return c[:drop] + c[drop + 1:]


def tournament(scores: Sequence[float], size: int, rng: random.Random) -> int:
    """Index of the best of ``size`` distinct uniformly drawn members."""
    drawn = rng.sample(range(len(scores)), size)
    return max(drawn, key=lambda i: scores[i])


def init_population(config: GaConfig, index: ExposureIndex, rng: random.Random) -> list[Cocktail]:
    """Random cocktails of Poisson-distributed size, each taken by some patient."""
    tree = index.tree
    eligible = [int(v) for v in tree.eligible(config.min_depth)]
    if not any(index.per_node[v] for v in eligible):
        raise DataError("no patient is exposed to any eligible node")
    np_rng = np.random.default_rng(rng.getrandbits(64))
    pop = []
    for _ in range(config.population_size):
        for _attempt in range(1000):
            s = 0
            while s < 1:
                s = int(np_rng.poisson(config.init_lambda))
            s = min(s, len(eligible))
            c = tuple(sorted(rng.sample(eligible, s)))
            if index.counts(c)[0] >= config.min_patients:
                break
        else:
            c = _fallback_cocktail(index, rng, config.min_depth)
        pop.append(c)
    return pop


def _fallback_cocktail(index: ExposureIndex, rng: random.Random, min_depth: int) -> Cocktail:
    tree = index.tree
    while True:
        p = rng.randrange(index.n_patients)
        drugs = [v for v in index.reports.drugs[p] if tree.depth[v] >= min_depth]
        if drugs:
            return (drugs[rng.randrange(len(drugs))],)
        exposed = index.exposed_nodes(p, min_depth)
        if exposed:
            return (exposed[rng.randrange(len(exposed))],)


# --------------------------------------------------------------------------
# driver


def run_ga(config: GaConfig, index: ExposureIndex, rng: random.Random | None = None,
           initial: Sequence[Cocktail] | None = None, run_id: int = 0,
           scorer: Scorer | None = None) -> Archive:
    """Evolve a population for ``config.iterations`` generations and archive what it saw."""
    config.validate()
    tree = index.tree
    rng = rng or random.Random(config.seed)
    scorer = scorer or Scorer(index)
    eligible = [int(v) for v in tree.eligible(config.min_depth)]
    m = config.population_size
    archive = Archive()
    seen: dict[Cocktail, float] = {}

    def evaluate(pop: list[Cocktail], it: int) -> np.ndarray:
        out = np.empty(len(pop))
        for i, c in enumerate(pop):
            h = seen.get(c)
            if h is None:
                n_c, x, h = scorer.evaluate(c)
                seen[c] = h
                if n_c >= config.min_patients:
                    archive.add(c, ArchiveEntry(n_c, x, h, it, run_id))
            out[i] = h
        return out

    pop = [make_cocktail(c) for c in initial] if initial is not None else init_population(config, index, rng)
    if len(pop) != m:
        raise ValueError(f"initial population has {len(pop)} members, expected {m}")
    h = evaluate(pop, 0)
    n_children = m - config.elitism
    for it in range(1, config.iterations + 1):
        if config.selection == "penalized":
            fitness = h / similarity_sums(tree, pop)
        else:
            fitness = h
        pool = [pop[tournament(fitness, config.tournament_size, rng)] for _ in range(n_children)]
        children: list[Cocktail] = []
        for i in range(0, n_children, 2):
            pair = pool[i:i + 2]
            if len(pair) == 2 and rng.random() < config.crossover_prob:
                pair = list(crossover(pair[0], pair[1], tree, rng))
            for c in pair:
                if rng.random() < config.mutation_prob:
                    if rng.random() < config.local_mutation_prob:
                        c = mutate_local(c, tree, rng, config.min_depth)
                    else:
                        c = mutate_add_delete(c, tree, rng, config.alpha, eligible)
                children.append(c)
        elite = np.argsort(-h, kind="stable")[: config.elitism]
        pop = [pop[i] for i in elite] + children
        h = evaluate(pop, it)
        log.debug("run %d iteration %d: best H %.4g, archive %d", run_id, it, h.max(), len(archive))
    return archive


def _run_one(args) -> Archive:
    config, index, run_id = args
    return run_ga(config, index, random.Random(config.seed), run_id=run_id)


def derive_seeds(seed: int, n: int) -> list[int]:
    """Independent per-run seeds from one master seed."""
    return [int(s.generate_state(1, dtype=np.uint64)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def run_many(configs: Iterable[GaConfig], index: ExposureIndex, threads: int = 1) -> Archive:
    """Run independent GA instances and merge their archives (max H per cocktail)."""
    jobs = [(c, index, i) for i, c in enumerate(configs)]
    merged = Archive()
    if threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    for i, a in enumerate(results):
        log.info("run %d: %d archived cocktails, best H %.4g", i, len(a), a.best_h())
        merged.merge(a)
    return merged


def config_dict(config: GaConfig) -> dict:
    return asdict(config)
