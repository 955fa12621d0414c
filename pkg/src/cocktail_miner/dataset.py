"""Patient reports, per-node exposure bitsets, and the synthetic benchmark."""

from __future__ import annotations

import csv
import itertools
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .tree import AtcTree, Cocktail, make_cocktail


class DataError(ValueError):
    """Input data that cannot be used (unknown codes, empty datasets, ...)."""


@dataclass(frozen=True, eq=False)
class ReportSet:
    patient_ids: tuple[str, ...]
    drugs: tuple[tuple[int, ...], ...]  # sorted leaf ids per patient
    ae: np.ndarray  # bool per patient
    skipped_codes: int = 0
    dropped_rows: int = 0

    @property
    def n(self) -> int:
        return len(self.drugs)

    @property
    def k(self) -> int:
        return int(self.ae.sum())


def ingest_reports(path: str | Path, tree: AtcTree, on_unknown: str = "skip-code") -> ReportSet:
    """Read a ``patient_id,atc_codes,ae`` file.

    ``on_unknown`` is ``"skip-code"`` (drop unknown or non-leaf codes and
    count them) or ``"fail"``.  Rows left with no usable code are dropped.
    """
    if on_unknown not in ("skip-code", "fail"):
        raise ValueError(f"unknown policy {on_unknown!r}")
    ids, drugs, ae = [], [], []
    skipped = dropped = 0
    bad: list[str] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"patient_id", "atc_codes", "ae"} - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            leaves = set()
            for code in row["atc_codes"].split(";"):
                code = code.strip()
                if not code:
                    continue
                v = tree.code_to_id.get(code)
                if v is None or not tree.is_leaf(v):
                    skipped += 1
                    if on_unknown == "fail":
                        bad.append(code if v is None else f"{code} (not a leaf)")
                    continue
                leaves.add(v)
            flag = row["ae"].strip()
            if flag not in ("0", "1"):
                raise DataError(f"{path}: patient {row['patient_id']}: ae must be 0 or 1, got {flag!r}")
            if not leaves:
                dropped += 1
                continue
            ids.append(row["patient_id"])
            drugs.append(tuple(sorted(leaves)))
            ae.append(flag == "1")
    if bad:
        shown = ", ".join(sorted(set(bad))[:20])
        raise DataError(f"{path}: {len(bad)} unusable ATC code(s): {shown}")
    if not drugs:
        raise DataError(f"{path}: no usable patient rows")
    return ReportSet(tuple(ids), tuple(drugs), np.array(ae, dtype=bool), skipped, dropped)


def write_reports(reports: ReportSet, tree: AtcTree, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["patient_id", "atc_codes", "ae"])
        for pid, leaves, flag in zip(reports.patient_ids, reports.drugs, reports.ae):
            w.writerow([pid, tree.cocktail_codes(leaves), int(flag)])


def _bits_from_indices(idx: np.ndarray, n: int) -> int:
    mask = np.zeros(n, dtype=bool)
    mask[idx] = True
    return int.from_bytes(np.packbits(mask, bitorder="little").tobytes(), "little")


@dataclass(frozen=True, eq=False)
class ExposureIndex:
    """Per-node patient bitsets stored as Python ints (bit ``p`` = patient ``p``)."""

    tree: AtcTree
    reports: ReportSet
    per_node: tuple[int, ...]
    ae_mask: int
    n_patients: int
    n_ae: int

    def counts(self, cocktail: Sequence[int]) -> tuple[int, int]:
        """``(n_c, x)``: patients exposed to every node, and those with the AE."""
        it = iter(cocktail)
        bits = self.per_node[next(it)]
        for v in it:
            bits &= self.per_node[v]
        return bits.bit_count(), (bits & self.ae_mask).bit_count()

    def node_count(self, v: int) -> int:
        return self.per_node[v].bit_count()

    def exposed_nodes(self, patient: int, min_depth: int = 1) -> list[int]:
        """All nodes a patient is exposed to: their leaves and every ancestor."""
        seen = set()
        for leaf in self.reports.drugs[patient]:
            for v in self.tree.path_to_root(leaf):
                if self.tree.depth[v] >= min_depth:
                    seen.add(v)
        return sorted(seen)


def build_index(reports: ReportSet, tree: AtcTree) -> ExposureIndex:
    n = reports.n
    by_leaf: dict[int, list[int]] = {}
    for p, leaves in enumerate(reports.drugs):
        for v in leaves:
            by_leaf.setdefault(v, []).append(p)
    bits = [0] * len(tree)
    for v, pats in by_leaf.items():
        bits[v] = _bits_from_indices(np.asarray(pats), n)
    # preorder ids: every child has a larger id than its parent
    for v in range(len(tree) - 1, -1, -1):
        p = int(tree.parent[v])
        if p >= 0 and bits[v]:
            bits[p] |= bits[v]
    ae_mask = _bits_from_indices(np.flatnonzero(reports.ae), n)
    return ExposureIndex(tree, reports, tuple(bits), ae_mask, n, reports.k)


# --------------------------------------------------------------------------
# synthetic data


@dataclass
class PlantedSpec:
    size: int
    fraction: float
    ae_prob: float
    codes: list[str] | None = None


@dataclass
class ScenarioSpec:
    n_patients: int = 200_000
    planted: list[PlantedSpec] = field(default_factory=list)
    decoy_fraction_per_combo: float = 0.015
    background_ae_prob: float = 1 / 15000
    lam: float = 4.0
    decoy_zero_risk: bool = False

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        known = {"n_patients", "planted", "decoy_fraction_per_combo",
                 "background_ae_prob", "lambda", "decoy_zero_risk"}
        extra = set(d) - known
        if extra:
            raise DataError(f"unknown scenario keys: {sorted(extra)}")
        try:
            planted = [PlantedSpec(**p) for p in d.get("planted", [])]
        except TypeError as exc:
            raise DataError(f"bad planted cocktail entry: {exc}") from None
        return cls(
            n_patients=int(d.get("n_patients", 200_000)),
            planted=planted,
            decoy_fraction_per_combo=float(d.get("decoy_fraction_per_combo", 0.015)),
            background_ae_prob=float(d.get("background_ae_prob", 1 / 15000)),
            lam=float(d.get("lambda", 4.0)),
            decoy_zero_risk=bool(d.get("decoy_zero_risk", False)),
        )

    def to_dict(self) -> dict:
        return {
            "n_patients": self.n_patients,
            "planted": [
                {k: v for k, v in vars(p).items() if v is not None} for p in self.planted
            ],
            "decoy_fraction_per_combo": self.decoy_fraction_per_combo,
            "background_ae_prob": self.background_ae_prob,
            "lambda": self.lam,
            "decoy_zero_risk": self.decoy_zero_risk,
        }


_VARIANT_SIZES = {
    "default": (3, 3, 2, 2),
    "two-only": (2, 2, 2, 2),
    "three-only": (3, 3, 3, 3),
    "mixed": (4, 3, 2, 2),
}


def builtin_scenario(name: str = "default", n_patients: int = 200_000, ae_scale: float = 1.0) -> ScenarioSpec:
    """The benchmark layouts: four planted cocktails at 1% each, AE risk 1/100 or 1/200.

    ``ae_scale`` multiplies every AE probability.  Raising it by the factor
    that ``n_patients`` is lowered keeps the expected AE counts of the
    full-size benchmark.
    """
    try:
        sizes = _VARIANT_SIZES[name]
    except KeyError:
        raise DataError(f"unknown scenario {name!r}; choose from {sorted(_VARIANT_SIZES)}") from None
    probs = (1 / 100, 1 / 200, 1 / 100, 1 / 200)
    return ScenarioSpec(
        n_patients=n_patients,
        planted=[PlantedSpec(s, 0.01, p * ae_scale) for s, p in zip(sizes, probs)],
        background_ae_prob=ae_scale / 15000,
    )


def load_scenario(path: str | Path) -> ScenarioSpec:
    try:
        with open(path, encoding="utf-8") as fh:
            return ScenarioSpec.from_dict(json.load(fh))
    except (json.JSONDecodeError, TypeError, ValueError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"{path}: invalid scenario file: {exc}") from None


@dataclass
class GroundTruth:
    planted: list[Cocktail]
    ae_probs: list[float]
    decoys: list[Cocktail]
    assigned: list[int]  # patients deliberately given each planted cocktail
    realized: list[tuple[int, int]]  # (n_c, x) over the whole dataset

    def to_dict(self, tree: AtcTree) -> dict:
        return {
            "planted": [
                {
                    "codes": [tree.codes[v] for v in c],
                    "ae_prob": p,
                    "assigned": a,
                    "n_c": r[0],
                    "x": r[1],
                }
                for c, p, a, r in zip(self.planted, self.ae_probs, self.assigned, self.realized)
            ],
            "decoys": [[tree.codes[v] for v in c] for c in self.decoys],
        }

    @classmethod
    def from_dict(cls, d: dict, tree: AtcTree) -> "GroundTruth":
        planted = [make_cocktail(tree.node_id(c) for c in p["codes"]) for p in d["planted"]]
        return cls(
            planted=planted,
            ae_probs=[p["ae_prob"] for p in d["planted"]],
            decoys=[make_cocktail(tree.node_id(c) for c in dc) for dc in d["decoys"]],
            assigned=[p["assigned"] for p in d["planted"]],
            realized=[(p["n_c"], p["x"]) for p in d["planted"]],
        )


def _check_prob(name: str, p: float) -> None:
    if not 0.0 <= p <= 1.0:
        raise DataError(f"{name} must lie in [0, 1], got {p}")


def simulate(spec: ScenarioSpec, tree: AtcTree, seed: int) -> tuple[ReportSet, GroundTruth]:
    """Draw a synthetic report set with planted high-risk cocktails.

    Layout: each planted cocktail is taken by ``fraction * N`` patients; every
    (size-1)-subset of a planted cocktail of size >= 3 is a decoy taken by
    ``decoy_fraction_per_combo * N`` patients at background risk; everybody
    else takes ``s ~ Poisson(lam)`` (s >= 1) uniformly drawn nodes, each
    internal node standing for one random leaf beneath it.
    """
    n = spec.n_patients
    if n < 1000:
        raise DataError(f"n_patients must be at least 1000, got {n}")
    _check_prob("background_ae_prob", spec.background_ae_prob)
    rng = np.random.default_rng(seed)
    py = random.Random(int(rng.integers(2**63)))
    leaves = [int(v) for v in tree.leaf_ids]

    planted: list[Cocktail] = []
    used: set[int] = set()
    for p in spec.planted:
        _check_prob("ae_prob", p.ae_prob)
        if p.codes:
            ids = [tree.node_id(c) for c in p.codes]
            if len(set(ids)) != p.size or any(not tree.is_leaf(v) for v in ids):
                raise DataError(f"planted codes {p.codes} must be {p.size} distinct leaves")
        else:
            free = [v for v in leaves if v not in used]
            if len(free) < p.size:
                raise DataError("tree has too few leaves for the planted cocktails")
            ids = py.sample(free, p.size)
        used.update(ids)
        planted.append(make_cocktail(ids))

    decoys: list[Cocktail] = []
    for c in planted:
        if len(c) >= 3:
            decoys.extend(itertools.combinations(c, len(c) - 1))

    groups: list[tuple[Cocktail, float, int]] = []
    for c, p in zip(planted, spec.planted):
        groups.append((c, p.ae_prob, round(p.fraction * n)))
    decoy_prob = 0.0 if spec.decoy_zero_risk else spec.background_ae_prob
    for c in decoys:
        groups.append((c, decoy_prob, round(spec.decoy_fraction_per_combo * n)))
    n_background = n - sum(g[2] for g in groups)
    if n_background < 0:
        raise DataError("planted and decoy fractions exceed the patient count")

    drugs: list[tuple[int, ...]] = []
    probs = np.empty(n)
    i = 0
    for c, prob, count in groups:
        drugs.extend([c] * count)
        probs[i:i + count] = prob
        i += count
    probs[i:] = spec.background_ae_prob

    n_nodes = len(tree)
    sizes = rng.poisson(spec.lam, size=n_background)
    while (zero := sizes == 0).any():
        sizes[zero] = rng.poisson(spec.lam, size=int(zero.sum()))
    sizes = np.minimum(sizes, n_nodes)
    nodes = range(n_nodes)
    for s in sizes:
        picked = set()
        for v in py.sample(nodes, int(s)):
            under = tree.leaves_under(v)
            picked.add(int(under[py.randrange(len(under))]))
        drugs.append(tuple(sorted(picked)))

    ae = rng.random(n) < probs
    order = rng.permutation(n)
    drugs = [drugs[j] for j in order]
    ae = ae[order]
    width = len(str(n))
    ids = tuple(f"p{j + 1:0{width}d}" for j in range(n))
    reports = ReportSet(ids, tuple(drugs), ae)

    realized = []
    for c in planted:
        cs = set(c)
        takers = [p for p, d in enumerate(drugs) if cs.issubset(d)]
        realized.append((len(takers), int(ae[takers].sum())))
    truth = GroundTruth(
        planted=planted,
        ae_probs=[p.ae_prob for p in spec.planted],
        decoys=[make_cocktail(d) for d in decoys],
        assigned=[g[2] for g in groups[: len(planted)]],
        realized=realized,
    )
    return reports, truth
