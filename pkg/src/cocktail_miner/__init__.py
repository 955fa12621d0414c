"""Detect high-risk drug cocktails in adverse-event report data.

The pipeline scores cocktails of ATC nodes with a hypergeometric tail score,
searches for high scorers with a genetic algorithm, calibrates scores against
MCMC-sampled null distributions and clusters the significant results.
"""

__version__ = "0.1.0"

from .cluster import dbscan, default_eps, embed_2d
from .dataset import (DataError, ExposureIndex, GroundTruth, ReportSet, ScenarioSpec, build_index,
                      builtin_scenario, ingest_reports, load_scenario, simulate)
from .distance import cocktail_distance, distance_matrix, similarity
from .genetic import Archive, GaConfig, run_ga, run_many
from .mcmc import McmcConfig, NullDistribution, empirical_pvalue, run_chain, run_chains
from .scoring import CocktailCounts, Scorer, hypergeom_log_sf, score_h, score_prr, score_rr
from .tree import AtcTree, TreeError, build_tree, lca_cost, load_tree, make_cocktail

__all__ = [
    "Archive", "AtcTree", "CocktailCounts", "DataError", "ExposureIndex", "GaConfig", "GroundTruth",
    "McmcConfig", "NullDistribution", "ReportSet", "ScenarioSpec", "Scorer", "TreeError",
    "build_index", "build_tree", "builtin_scenario", "cocktail_distance", "dbscan", "default_eps",
    "distance_matrix", "embed_2d", "empirical_pvalue", "hypergeom_log_sf", "ingest_reports",
    "lca_cost", "load_scenario", "load_tree", "make_cocktail", "run_chain", "run_chains", "run_ga",
    "run_many", "score_h", "score_prr", "score_rr", "similarity", "simulate",
]
