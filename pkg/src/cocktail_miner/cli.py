"""Command-line front end: simulate, search, sample, report, compare, verify.

Exit codes: 0 success, 2 usage error, 3 data error, 4 internal error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import random
import sys
from dataclasses import replace
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .cluster import (NOISE, cluster_report, dbscan, default_eps, embed_2d, families_of,
                      k_distance, read_tags, write_cluster_report)
from .compare import pr_curve, score_table, write_pr_curves, write_score_table
from .dataset import (DataError, GroundTruth, ScenarioSpec, build_index, builtin_scenario,
                      ingest_reports, load_scenario, simulate, write_reports)
from .distance import distance_matrix, write_distance_matrix
from .genetic import GaConfig, derive_seeds, fmt, read_archive, run_many, write_archive
from .mcmc import (McmcConfig, empirical_pvalue, probe_temperature, read_null, run_chains,
                   write_null)
from .tree import TreeError, load_tree

log = logging.getLogger("cocktail_miner")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4
THREADS_ENV = "COCKTAIL_MINER_THREADS"
MANIFEST = "manifest.json"
RESULT_COLUMNS = ["cocktail_codes", "n_c", "x", "H", "RR", "PRR", "p_value", "cluster", "families"]
# keys that steer the CLI itself rather than the computation
_META_KEYS = {"command", "handler", "config", "dump_config", "verbose"}


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# helpers


def bundled(name: str) -> Path:
    """Path of a file shipped inside the package (``toy_tree.csv``, ``tree200.csv``)."""
    return Path(str(resources.files("cocktail_miner") / "data" / name))


def sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _tree_path(args) -> Path:
    return Path(args.tree) if args.tree else bundled("tree200.csv")


def _int_list(text: str) -> list[int]:
    try:
        values = [int(t) for t in str(text).split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("values must be positive integers")
    return values


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {v}")
    return v


def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get(THREADS_ENV)
    if not env:
        return 1
    try:
        return _positive_int(env)
    except (ValueError, argparse.ArgumentTypeError):
        raise UsageError(f"{THREADS_ENV} must be a positive integer, got {env!r}") from None


def _require(args, *names: str) -> None:
    missing = [n for n in names if getattr(args, n) is None]
    if missing:
        flags = ", ".join("--" + n.replace("_", "-") for n in missing)
        raise UsageError(f"{args.command}: missing required option(s) {flags}")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def resolved_config(args) -> dict:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in _META_KEYS}
    cfg["threads"] = _threads(args)
    return cfg


def write_manifest(out: Path, args, started: str, seeds, inputs: dict[str, Path],
                   outputs: list[str]) -> None:
    manifest = {
        "tool": "cocktail-miner",
        "version": __version__,
        "subcommand": args.command,
        "config": resolved_config(args),
        "seeds": seeds,
        "inputs": {role: {"path": str(p), "sha256": sha256(p)} for role, p in inputs.items()},
        "outputs": {name: sha256(out / name) for name in sorted(outputs)},
        "started": started,
        "finished": _now(),
    }
    with open(out / MANIFEST, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, default=str)
        fh.write("\n")


def _ga_config(args, population: int, seed: int) -> GaConfig:
    return GaConfig(
        population_size=population,
        tournament_size=args.tournament_size,
        alpha=args.alpha,
        iterations=args.iters,
        crossover_prob=args.crossover_prob,
        mutation_prob=args.mutation_prob,
        local_mutation_prob=args.local_mutation_prob,
        elitism=args.elitism,
        init_lambda=args.init_lambda,
        selection=args.selection,
        min_depth=args.min_depth,
        min_patients=args.min_patients,
        seed=seed,
    )


def _load_data(args):
    tree_path = _tree_path(args)
    tree = load_tree(tree_path)
    reports = ingest_reports(args.reports, tree, on_unknown=args.on_unknown)
    if reports.skipped_codes:
        log.warning("skipped %d unknown or non-leaf codes", reports.skipped_codes)
    if reports.dropped_rows:
        log.warning("dropped %d rows with no usable codes", reports.dropped_rows)
    return tree_path, tree, reports, build_index(reports, tree)


# --------------------------------------------------------------------------
# subcommands


SCENARIO_NAMES = ("default", "two-only", "three-only", "mixed", "desk")


def _scenario(args) -> ScenarioSpec:
    if Path(args.scenario).is_file():
        try:
            spec = load_scenario(args.scenario)
        except DataError as exc:
            raise UsageError(str(exc)) from None
    elif args.scenario in SCENARIO_NAMES:
        name, n, scale = args.scenario, 200_000, 1.0
        if name == "desk":
            name, n, scale = "default", 20_000, 10.0
        spec = builtin_scenario(name, args.n_patients or n, args.ae_scale or scale)
    else:
        raise UsageError(f"--scenario: no such file or built-in scenario: {args.scenario!r} "
                         f"(built-ins: {', '.join(SCENARIO_NAMES)})")
    if args.decoy_zero_risk:
        spec.decoy_zero_risk = True
    return spec


def cmd_simulate(args) -> int:
    _require(args, "out")
    started = _now()
    spec = _scenario(args)
    tree_path = _tree_path(args)
    tree = load_tree(tree_path)
    reports, truth = simulate(spec, tree, args.seed)
    out = _out_dir(args)
    write_reports(reports, tree, out / "reports.csv")
    with open(out / "ground_truth.json", "w", encoding="utf-8") as fh:
        json.dump(truth.to_dict(tree), fh, indent=2)
        fh.write("\n")
    with open(out / "scenario.json", "w", encoding="utf-8") as fh:
        json.dump(spec.to_dict(), fh, indent=2)
        fh.write("\n")
    write_manifest(out, args, started, {"seed": args.seed}, {"tree": tree_path},
                   ["reports.csv", "ground_truth.json", "scenario.json"])
    log.info("wrote %d patients (%d with the event) to %s", reports.n, reports.k, out)
    return EXIT_OK


def cmd_search(args) -> int:
    _require(args, "reports", "out")
    started = _now()
    tree_path, tree, reports, index = _load_data(args)
    seeds = derive_seeds(args.seed, args.runs)
    pops = [args.pop[i % len(args.pop)] for i in range(args.runs)]
    configs = [_ga_config(args, m, s) for m, s in zip(pops, seeds)]
    for c in configs:
        try:
            c.validate()
        except ValueError as exc:
            raise UsageError(str(exc)) from None
    archive = run_many(configs, index, threads=_threads(args))
    out = _out_dir(args)
    write_archive(archive, tree, reports.n, reports.k, out / "archive.csv")
    write_manifest(out, args, started, {"seed": args.seed, "runs": seeds, "populations": pops},
                   {"tree": tree_path, "reports": Path(args.reports)}, ["archive.csv"])
    log.info("archive of %d cocktails, best H %.4g", len(archive), archive.best_h())
    return EXIT_OK


def cmd_sample(args) -> int:
    _require(args, "reports", "out")
    if args.sizes is None and args.archive is None:
        raise UsageError("sample: give --sizes or --archive")
    started = _now()
    tree_path, tree, reports, index = _load_data(args)
    inputs = {"tree": tree_path, "reports": Path(args.reports)}
    if args.sizes is not None:
        sizes = sorted(set(args.sizes))
    else:
        sizes = read_archive(args.archive, tree).sizes()
        inputs["archive"] = Path(args.archive)
    # one seed per size, so adding a size never changes the others
    size_seeds = derive_seeds(args.seed, max(sizes, default=0))
    out = _out_dir(args)
    written, seeds = [], {}
    for k in sizes:
        seed = size_seeds[k - 1]
        config = McmcConfig(
            k=k, temperature=1.0, p_random=args.p_random, iterations=args.iters,
            burn_in=args.burn_in, thin=args.thin, seed=seed, random_kernel=args.random_kernel,
            min_patients=args.min_patients, min_depth=args.min_depth,
        )
        try:
            config.validate(tree)
        except ValueError as exc:
            if k > len(tree.eligible(args.min_depth)):
                log.warning("size %d: %s; skipped", k, exc)
                continue
            raise UsageError(str(exc)) from None
        try:
            temp = args.temperature
            if temp is None:
                temp = probe_temperature(index, k, random.Random(seed), factor=args.temperature_factor,
                                         min_depth=args.min_depth)
            dist = run_chains(replace(config, temperature=temp), index, args.chains, _threads(args))
        except DataError as exc:
            log.warning("size %d: %s; skipped", k, exc)
            continue
        write_null(dist, out)
        written += [f"null_k{k}.csv", f"null_k{k}.json", f"null_k{k}_summary.csv"]
        seeds[str(k)] = seed
        if args.figures:
            from .plots import plot_null
            plot_null(dist.samples, out / f"null_k{k}.png", k)
            written.append(f"null_k{k}.png")
        log.info("size %d: T=%.4g, acceptance %.3f, %d samples", k, temp, dist.acceptance_rate,
                 len(dist.samples))
    write_manifest(out, args, started, {"seed": args.seed, "per_size": seeds}, inputs, written)
    return EXIT_OK


def cmd_report(args) -> int:
    _require(args, "archive", "nulls", "out")
    started = _now()
    tree_path = _tree_path(args)
    tree = load_tree(tree_path)
    archive = read_archive(args.archive, tree)
    ranked = archive.ranked()
    sizes = archive.sizes()
    nulls, missing = {}, []
    for k in sizes:
        try:
            nulls[k] = read_null(args.nulls, k)
        except DataError:
            missing.append(k)
    if missing:
        raise DataError(f"{args.nulls}: no null distribution for size(s) {', '.join(map(str, missing))}")
    tags = read_tags(args.tags) if args.tags else []
    inputs = {"tree": tree_path, "archive": Path(args.archive)}
    if args.tags:
        inputs["tags"] = Path(args.tags)

    h = np.array([e.h for _, e in ranked])
    pvals = np.empty(len(ranked))
    for k, dist in nulls.items():
        idx = [i for i, (c, _) in enumerate(ranked) if len(c) == k]
        pvals[idx] = empirical_pvalue(h[idx], dist, reweight=args.reweight)
    keep = [i for i in range(len(ranked)) if pvals[i] <= args.threshold]
    survivors = [ranked[i][0] for i in keep]
    codes = [tree.cocktail_codes(c) for c in survivors]

    labels = np.full(len(survivors), NOISE, dtype=int)
    coords = np.zeros((len(survivors), 2))
    out = _out_dir(args)
    written = ["results.csv", "clusters.csv", "coords.csv"]
    eps = None
    if survivors:
        dist = distance_matrix(tree, survivors)
        eps = args.eps if args.eps is not None else default_eps(dist)
        labels = dbscan(dist, eps, args.min_pts)
        coords = embed_2d(dist)
        if args.k_distance:
            for v in k_distance(dist, args.k_distance):
                print(fmt(float(v)))
        if args.export_distances:
            write_distance_matrix(out / "distances.csv", codes, dist)
            written.append("distances.csv")

    tag_limit = len(survivors) if args.tag_top is None else args.tag_top
    families = [
        families_of(c.split(";"), tags) if i < tag_limit else []
        for i, c in enumerate(codes)
    ]
    with open(out / "results.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for j, i in enumerate(keep):
            e = ranked[i][1]
            w.writerow([codes[j], e.n_c, e.x, fmt(e.h), fmt(e.rr), fmt(e.prr), fmt(float(pvals[i])),
                        int(labels[j]), "|".join(families[j])])
    tagged = list(range(min(tag_limit, len(survivors))))
    write_cluster_report(
        cluster_report([codes[j].split(";") for j in tagged], [labels[j] for j in tagged], tags),
        tags, out / "clusters.csv",
    )
    with open(out / "coords.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cocktail_codes", "x", "y", "cluster"])
        for c, (a, b), lab in zip(codes, coords, labels):
            w.writerow([c, fmt(float(a)), fmt(float(b)), int(lab)])
    if args.figures and survivors:
        from .plots import plot_clusters
        plot_clusters(coords, labels, out / "clusters.png")
        written.append("clusters.png")
    write_manifest(out, args, started, {}, inputs, written)
    log.info("%d of %d cocktails significant at %.3g; eps %s; %d clusters", len(survivors), len(ranked),
             args.threshold, "n/a" if eps is None else f"{eps:.4g}", len(set(labels.tolist()) - {NOISE}))
    return EXIT_OK


def cmd_compare(args) -> int:
    _require(args, "reports", "truth", "out")
    started = _now()
    tree_path, tree, reports, index = _load_data(args)
    with open(args.truth, encoding="utf-8") as fh:
        try:
            truth = GroundTruth.from_dict(json.load(fh), tree)
        except (KeyError, json.JSONDecodeError) as exc:
            raise DataError(f"{args.truth}: invalid ground truth: {exc}") from None
    table = score_table(index, truth, args.size)
    curves = {name: pr_curve(table.score(name), table.is_true) for name in ("H", "RR", "PRR")}
    # PRR as used in practice is a yes/no signal: one precision-recall point
    sig = table.prr_signal
    tp = int((sig & table.is_true).sum())
    curves["PRR_signal"] = [(1.0, tp / max(int(sig.sum()), 1), tp / max(int(table.is_true.sum()), 1))]
    out = _out_dir(args)
    write_score_table(table, tree, out / "scores.csv")
    write_pr_curves(curves, out / "pr_curves.csv")
    written = ["scores.csv", "pr_curves.csv"]
    if args.figures:
        from .plots import plot_score_comparison
        plot_score_comparison(table, out / "score_comparison.png", curves)
        written.append("score_comparison.png")
    write_manifest(out, args, started, {}, {"tree": tree_path, "reports": Path(args.reports),
                                            "truth": Path(args.truth)}, written)
    return EXIT_OK


def cmd_verify(args) -> int:
    """Recompute every digest recorded in a manifest."""
    directory = Path(args.directory)
    try:
        with open(directory / MANIFEST, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read {directory / MANIFEST}: {exc}") from None
    bad = []
    for role, item in manifest.get("inputs", {}).items():
        p = Path(item["path"])
        if not p.is_file() or sha256(p) != item["sha256"]:
            bad.append(f"input {role} ({p})")
    for name, digest in manifest.get("outputs", {}).items():
        p = directory / name
        if not p.is_file() or sha256(p) != digest:
            bad.append(f"output {name}")
    if bad:
        for b in bad:
            print(f"MISMATCH {b}")
        return EXIT_DATA
    print("ok")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file of option values (flags still win)")
    p.add_argument("--dump-config", action="store_true", help="print the resolved options and exit")
    p.add_argument("--threads", type=_positive_int, default=None,
                   help=f"worker processes (default: ${THREADS_ENV} or 1)")
    p.add_argument("-v", "--verbose", action="count", default=0)


def _add_data(p: argparse.ArgumentParser) -> None:
    p.add_argument("--reports", help="patient report CSV")
    p.add_argument("--tree", help="ATC tree CSV (default: bundled 200-node tree)")
    p.add_argument("--on-unknown", choices=["fail", "skip-code"], default="fail",
                   help="what to do with codes missing from the tree or not leaves")


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(prog="cocktail-miner", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    p = subs["simulate"] = sub.add_parser("simulate", help="draw a synthetic report set")
    _add_common(p)
    p.add_argument("--scenario", default="default",
                   help=f"scenario JSON file or built-in name ({', '.join(SCENARIO_NAMES)})")
    p.add_argument("--n-patients", type=_positive_int, default=None, help="override N for built-ins")
    p.add_argument("--ae-scale", type=float, default=None, help="scale AE probabilities of built-ins")
    p.add_argument("--decoy-zero-risk", action="store_true", help="decoy patients never have the event")
    p.add_argument("--tree")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(handler=cmd_simulate)

    ga = GaConfig()
    p = subs["search"] = sub.add_parser("search", help="genetic search for high-scoring cocktails")
    _add_common(p)
    _add_data(p)
    p.add_argument("--runs", type=_positive_int, default=8)
    p.add_argument("--pop", type=_int_list, default=[ga.population_size],
                   help="population sizes, cycled over runs (e.g. 100,200)")
    p.add_argument("--iters", type=int, default=ga.iterations)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tournament-size", type=int, default=ga.tournament_size)
    p.add_argument("--alpha", type=float, default=ga.alpha)
    p.add_argument("--crossover-prob", type=float, default=ga.crossover_prob)
    p.add_argument("--mutation-prob", type=float, default=ga.mutation_prob)
    p.add_argument("--local-mutation-prob", type=float, default=ga.local_mutation_prob)
    p.add_argument("--elitism", type=int, default=ga.elitism)
    p.add_argument("--init-lambda", type=float, default=ga.init_lambda)
    p.add_argument("--selection", choices=["penalized", "raw"], default=ga.selection)
    p.add_argument("--min-depth", type=_positive_int, default=ga.min_depth)
    p.add_argument("--min-patients", type=_positive_int, default=ga.min_patients)
    p.add_argument("--out")
    p.set_defaults(handler=cmd_search)

    mc = McmcConfig()
    p = subs["sample"] = sub.add_parser("sample", help="sample null score distributions per size")
    _add_common(p)
    _add_data(p)
    p.add_argument("--archive", help="take the sizes present in this archive")
    p.add_argument("--sizes", type=_int_list, help="explicit sizes, e.g. 2,3")
    p.add_argument("--chains", type=_positive_int, default=4)
    p.add_argument("--iters", type=_positive_int, default=mc.iterations)
    p.add_argument("--burn-in", type=int, default=None, help="default: 10%% of --iters")
    p.add_argument("--thin", type=_positive_int, default=mc.thin)
    p.add_argument("--temperature", type=float, default=None,
                   help="default: --temperature-factor times the spread of H over random cocktails")
    p.add_argument("--temperature-factor", type=float, default=1000.0)
    p.add_argument("--p-random", type=float, default=mc.p_random)
    p.add_argument("--random-kernel", choices=["full", "one-node"], default=mc.random_kernel)
    p.add_argument("--min-patients", type=_positive_int, default=mc.min_patients)
    p.add_argument("--min-depth", type=_positive_int, default=mc.min_depth)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--figures", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--out")
    p.set_defaults(handler=cmd_sample)

    p = subs["report"] = sub.add_parser("report", help="p-values, clustering and the final table")
    _add_common(p)
    p.add_argument("--archive")
    p.add_argument("--nulls", help="directory written by 'sample'")
    p.add_argument("--tree")
    p.add_argument("--threshold", type=float, default=0.05, help="keep cocktails with p <= threshold")
    p.add_argument("--reweight", action="store_true",
                   help="importance-reweight tempered samples back to the uniform null")
    p.add_argument("--eps", type=float, default=None, help="default: 25th percentile of distances")
    p.add_argument("--min-pts", type=_positive_int, default=4)
    p.add_argument("--tags", help="CSV 'family,prefix' for family tagging")
    p.add_argument("--tag-top", type=int, default=None, help="tag only the N highest-scoring rows")
    p.add_argument("--k-distance", type=_positive_int, default=None,
                   help="print each cocktail's k-th neighbour distance (sorted) to stdout")
    p.add_argument("--export-distances", action="store_true")
    p.add_argument("--figures", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--out")
    p.set_defaults(handler=cmd_report)

    p = subs["compare"] = sub.add_parser("compare", help="H vs RR vs PRR on data with known answers")
    _add_common(p)
    _add_data(p)
    p.add_argument("--truth", help="ground_truth.json from 'simulate'")
    p.add_argument("--size", type=_positive_int, default=2)
    p.add_argument("--figures", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--out")
    p.set_defaults(handler=cmd_compare)

    p = subs["verify"] = sub.add_parser("verify", help="check the digests in an output manifest")
    p.add_argument("directory")
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.set_defaults(handler=cmd_verify)
    return parser, subs


def parse_args(argv: list[str] | None):
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    path = getattr(args, "config", None)
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                values = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"--config: {exc}") from None
        if not isinstance(values, dict):
            raise UsageError("--config must hold a JSON object")
        values = {k.replace("-", "_"): v for k, v in values.items()}
        known = set(vars(args)) - _META_KEYS
        unknown = sorted(set(values) - known)
        if unknown:
            raise UsageError(f"--config: unknown option(s) for {args.command}: {', '.join(unknown)}")
        # re-parse so explicit flags override file values, which override defaults
        subs[args.command].set_defaults(**values)
        args = parser.parse_args(argv)
    return args


def main(argv: list[str] | None = None) -> int:
    try:
        args = parse_args(argv)
    except SystemExit as exc:  # argparse usage errors and --help/--version
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except UsageError as exc:
        print(f"cocktail-miner: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=logging.DEBUG if args.verbose > 1 else logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if getattr(args, "dump_config", False):
            print(json.dumps(resolved_config(args), indent=2, default=str))
            return EXIT_OK
        return args.handler(args)
    except UsageError as exc:
        print(f"cocktail-miner: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, TreeError, OSError, KeyError) as exc:
        print(f"cocktail-miner: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"cocktail-miner: internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
