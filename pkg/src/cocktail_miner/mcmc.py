"""Metropolis-Hastings sampling of the score distribution of size-k cocktails.

The chain targets ``f_T(C) ~ exp(H(C) / T)`` restricted to cocktails taken by
at least ``min_patients`` patients.  Each step flips a coin between a random
kernel (probability ``p_random``) and a local kernel moving one member to a
free tree neighbour, and applies that kernel's own Hastings correction.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
import math
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import DataError, ExposureIndex
from .genetic import derive_seeds
from .scoring import Scorer
from .tree import AtcTree, Cocktail, free_neighbors

log = logging.getLogger(__name__)

_CACHE_LIMIT = 2_000_000


@dataclass
class McmcConfig:
    k: int = 2
    temperature: float = 1.0
    p_random: float = 0.1
    iterations: int = 100_000
    burn_in: int | None = None  # defaults to 10% of iterations
    thin: int = 10
    seed: int = 0
    random_kernel: str = "full"  # or "one-node"
    min_patients: int = 1
    min_depth: int = 1
    keep_cocktails: bool = False

    @property
    def burn(self) -> int:
        return self.iterations // 10 if self.burn_in is None else self.burn_in

    def validate(self, tree: AtcTree | None = None) -> None:
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if not 0.0 <= self.p_random <= 1.0:
            raise ValueError("p_random must lie in [0, 1]")
        if not 0 <= self.burn < self.iterations:
            raise ValueError("need iterations > burn_in >= 0")
        if self.thin < 1:
            raise ValueError("thin must be at least 1")
        if self.random_kernel not in ("full", "one-node"):
            raise ValueError("random_kernel must be 'full' or 'one-node'")
        if tree is not None and self.k > len(tree.eligible(self.min_depth)):
            raise ValueError(f"k={self.k} exceeds the number of selectable nodes")


@dataclass
class NullDistribution:
    k: int
    temperature: float
    samples: np.ndarray
    acceptance_rate: float
    p_random: float = 0.1
    iterations: int = 0
    burn_in: int = 0
    thin: int = 1
    chains: int = 1
    seed: int = 0
    cocktails: list[Cocktail] | None = field(default=None, repr=False)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        self._sorted = np.sort(self.samples)

    def header(self) -> dict:
        return {
            "k": self.k,
            "temperature": self.temperature,
            "p_random": self.p_random,
            "iterations": self.iterations,
            "burn_in": self.burn_in,
            "thin": self.thin,
            "chains": self.chains,
            "seed": self.seed,
            "acceptance_rate": round(self.acceptance_rate, 6),
            "n_samples": int(len(self.samples)),
        }

    def weights(self) -> np.ndarray:
        """Importance weights ``exp(-H / T)`` (mean 1) that undo the tempering."""
        w = np.exp(-(self.samples - self.samples.min()) / self.temperature)
        return w / w.mean()


def log_n_subsets(n: int, k: int) -> float:
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def propose(c: Cocktail, config: McmcConfig, tree: AtcTree, rng: random.Random,
            eligible: Sequence[int]) -> tuple[Cocktail, float, float]:
    """Draw a proposal and the forward/backward log densities of the kernel used."""
    k = len(c)
    if rng.random() < config.p_random:
        n = len(eligible)
        if config.random_kernel == "full":
            new = tuple(sorted(rng.sample(eligible, k)))
            lq = -log_n_subsets(n, k)
            return new, lq, lq
        members = set(c)
        drop = rng.randrange(k)
        while True:
            b = eligible[rng.randrange(n)]
            if b not in members:
                break
        new = tuple(sorted(c[:drop] + c[drop + 1:] + (b,)))
        lq = -math.log(k) - math.log(n - k)
        return new, lq, lq
    return propose_local(c, tree, rng, config.min_depth)


def propose_local(c: Cocktail, tree: AtcTree, rng: random.Random, min_depth: int = 1,
                  at: int | None = None) -> tuple[Cocktail, float, float]:
    k = len(c)
    if at is None:
        at = c[rng.randrange(k)]
    fwd = free_neighbors(tree, c, at, min_depth)
    if not fwd:
        return c, 0.0, 0.0
    b = fwd[rng.randrange(len(fwd))]
    new = tuple(sorted([a for a in c if a != at] + [b]))
    back = free_neighbors(tree, new, b, min_depth)
    return new, -math.log(k) - math.log(len(fwd)), -math.log(k) - math.log(len(back))


def acceptance_log_ratio(h_current: float, h_proposal: float, log_q_forward: float,
                         log_q_backward: float, temperature: float) -> float:
    """``ln`` of the Metropolis-Hastings ratio; the normalizing constant cancels."""
    return (h_proposal - h_current) / temperature + log_q_backward - log_q_forward


def accept(log_ratio: float, rng: random.Random) -> bool:
    u = rng.random()
    return u == 0.0 or math.log(u) < log_ratio


def initial_state(index: ExposureIndex, k: int, rng: random.Random, min_depth: int = 1,
                  min_patients: int = 1, tries: int = 10_000) -> Cocktail:
    """A uniform size-k subset of a random patient's exposure set."""
    for _ in range(tries):
        p = rng.randrange(index.n_patients)
        exposed = index.exposed_nodes(p, min_depth)
        if len(exposed) >= k:
            c = tuple(sorted(rng.sample(exposed, k)))
            if index.counts(c)[0] >= min_patients:
                return c
    raise DataError(f"no exposed cocktail of size {k} found")


def run_chain(config: McmcConfig, index: ExposureIndex, rng: random.Random | None = None,
              scorer: Scorer | None = None) -> NullDistribution:
    tree = index.tree
    config.validate(tree)
    rng = rng or random.Random(config.seed)
    scorer = scorer or Scorer(index)
    eligible = [int(v) for v in tree.eligible(config.min_depth)]
    cache: dict[Cocktail, float | None] = {}

    def score(c: Cocktail) -> float | None:
        if c in cache:
            return cache[c]
        n_c, x = index.counts(c)
        h = scorer.h_from_counts(n_c, x) if n_c >= config.min_patients else None
        if len(cache) < _CACHE_LIMIT:
            cache[c] = h
        return h

    current = initial_state(index, config.k, rng, config.min_depth, config.min_patients)
    h = score(current)
    burn, thin, temp = config.burn, config.thin, config.temperature
    samples: list[float] = []
    kept: list[Cocktail] = []
    accepted = 0
    for i in range(config.iterations):
        prop, lqf, lqb = propose(current, config, tree, rng, eligible)
        if prop == current:
            accepted += 1
        else:
            h_new = score(prop)
            if h_new is not None and accept((h_new - h) / temp + lqb - lqf, rng):
                current, h = prop, h_new
                accepted += 1
        if i >= burn and (i - burn) % thin == 0:
            samples.append(h)
            if config.keep_cocktails:
                kept.append(current)
    return NullDistribution(
        k=config.k,
        temperature=temp,
        samples=np.array(samples),
        acceptance_rate=accepted / config.iterations,
        p_random=config.p_random,
        iterations=config.iterations,
        burn_in=burn,
        thin=thin,
        seed=config.seed,
        cocktails=kept if config.keep_cocktails else None,
    )


def pool(dists: Sequence[NullDistribution]) -> NullDistribution:
    """Concatenate chains run with the same settings (order is kept)."""
    first = dists[0]
    iters = sum(d.iterations for d in dists)
    rate = sum(d.acceptance_rate * d.iterations for d in dists) / iters
    cocktails = None
    if all(d.cocktails is not None for d in dists):
        cocktails = [c for d in dists for c in d.cocktails]
    return replace(
        first,
        samples=np.concatenate([d.samples for d in dists]),
        acceptance_rate=rate,
        chains=sum(d.chains for d in dists),
        cocktails=cocktails,
    )


def _chain_job(args) -> NullDistribution:
    config, index = args
    return run_chain(config, index, random.Random(config.seed))


def run_chains(config: McmcConfig, index: ExposureIndex, n_chains: int = 1,
               threads: int = 1) -> NullDistribution:
    """Run ``n_chains`` independently seeded chains and pool them."""
    seeds = derive_seeds(config.seed, n_chains)
    jobs = [(replace(config, seed=s), index) for s in seeds]
    if threads > 1 and n_chains > 1:
        with ProcessPoolExecutor(max_workers=threads) as ex:
            dists = list(ex.map(_chain_job, jobs))
    else:
        dists = [_chain_job(j) for j in jobs]
    for i, d in enumerate(dists):
        log.info("k=%d chain %d: acceptance %.3f, %d samples", config.k, i, d.acceptance_rate, len(d.samples))
    pooled = pool(dists)
    pooled.seed = config.seed
    return pooled


def probe_temperature(index: ExposureIndex, k: int, rng: random.Random, n_probe: int = 1000,
                      factor: float = 1000.0, min_depth: int = 1, scorer: Scorer | None = None) -> float:
    """``factor`` times the spread of H over random exposed size-k cocktails."""
    scorer = scorer or Scorer(index)
    hs = [scorer.h(initial_state(index, k, rng, min_depth)) for _ in range(n_probe)]
    sd = float(np.std(hs))
    return factor * sd if sd > 0 else 1.0


def empirical_pvalue(h, dist: NullDistribution, reweight: bool = False):
    """Add-one empirical p-value ``(1 + #{samples >= h}) / (M + 1)``.

    With ``reweight`` the samples are importance-weighted back to the uniform
    law over exposed cocktails.  Accepts a scalar or an array of scores.
    """
    h_arr = np.asarray(h, dtype=float)
    m = len(dist.samples)
    if m == 0:
        raise ValueError("null distribution has no samples")
    if reweight:
        order = np.argsort(dist.samples, kind="stable")
        s = dist.samples[order]
        w = dist.weights()[order]
        tail = np.concatenate([np.cumsum(w[::-1])[::-1], [0.0]])
        above = tail[np.searchsorted(s, h_arr, side="left")]
    else:
        above = m - np.searchsorted(dist._sorted, h_arr, side="left")
    p = (1.0 + above) / (m + 1.0)
    return float(p) if p.ndim == 0 else p


def exact_null(index: ExposureIndex, k: int, min_depth: int = 1, min_patients: int = 1,
               scorer: Scorer | None = None) -> tuple[list[Cocktail], np.ndarray]:
    """Enumerate every exposed size-k cocktail and its score (small trees only)."""
    scorer = scorer or Scorer(index)
    nodes = [int(v) for v in index.tree.eligible(min_depth) if index.node_count(int(v)) >= min_patients]
    cocktails, scores = [], []
    for c in itertools.combinations(nodes, k):
        n_c, x = index.counts(c)
        if n_c >= min_patients:
            cocktails.append(c)
            scores.append(scorer.h_from_counts(n_c, x))
    return cocktails, np.array(scores)


# --------------------------------------------------------------------------
# files


def null_paths(directory: str | Path, k: int) -> tuple[Path, Path, Path]:
    d = Path(directory)
    return d / f"null_k{k}.csv", d / f"null_k{k}.json", d / f"null_k{k}_summary.csv"


def write_null(dist: NullDistribution, directory: str | Path, bins: int = 50) -> None:
    samples_path, header_path, summary_path = null_paths(directory, dist.k)
    with open(samples_path, "w", newline="", encoding="utf-8") as fh:
        fh.write("H\n")
        fh.writelines(f"{v:.6g}\n" for v in dist.samples)
    with open(header_path, "w", encoding="utf-8") as fh:
        json.dump(dist.header(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    qs = [0.01, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 0.99]
    counts, edges = np.histogram(dist.samples, bins=bins)
    with open(summary_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind", "x", "x_hi", "value"])
        for q, v in zip(qs, np.quantile(dist.samples, qs)):
            w.writerow(["quantile", f"{q:.6g}", "", f"{v:.6g}"])
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            w.writerow(["histogram", f"{lo:.6g}", f"{hi:.6g}", int(c)])


def read_null(directory: str | Path, k: int) -> NullDistribution:
    samples_path, header_path, _ = null_paths(directory, k)
    if not header_path.exists() or not samples_path.exists():
        raise DataError(f"no null distribution for size {k} in {directory}")
    with open(header_path, encoding="utf-8") as fh:
        head = json.load(fh)
    samples = np.loadtxt(samples_path, skiprows=1, ndmin=1)
    return NullDistribution(
        k=head["k"],
        temperature=head["temperature"],
        samples=samples,
        acceptance_rate=head["acceptance_rate"],
        p_random=head["p_random"],
        iterations=head["iterations"],
        burn_in=head["burn_in"],
        thin=head["thin"],
        chains=head["chains"],
        seed=head["seed"],
    )


def config_dict(config: McmcConfig) -> dict:
    return asdict(config)
