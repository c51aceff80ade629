"""Seed scheduling by Katz centrality over the edge horizon graph."""
from __future__ import annotations

__version__ = "0.1.0"

from .centrality import (
    BetaVector,
    CentralityVector,
    KatzParams,
    Kind,
    SingularSystemError,
    alt_centrality,
    compute_beta,
    katz_dense_oracle,
    katz_power,
    truncated_expansion,
)
from .cfg import Cfg, CfgError, EdgeKind, format_cfg, out_neighbors, parse_cfg
from .graph import CycleError, Digraph, UnknownNodeError
from .horizon import (
    CoverageCorpus,
    CoverageError,
    EdgeHorizonGraph,
    NoCoverageError,
    build_edge_horizon_graph,
    classify_nodes,
    horizon_nodes,
    insert_seed_nodes,
    parse_traces,
    remove_loops,
    splice_visited,
)
from .oracle import RankAgreement, feasible_edges, kendall_tau, reachable_edge_oracle
from .scheduler import (
    Mode,
    MutationBatch,
    MutationStats,
    SchedulerState,
    SeedRanking,
    choose_seed,
    compute_energy,
    rank_seeds,
    record_mutation_batch,
    should_recompute,
)
from .simulator import (
    BENCHMARK_SUITE,
    CampaignResult,
    Strategy,
    SyntheticProgram,
    generate_program,
    run_campaign,
    simulate_campaign,
)

__all__ = [name for name in dir() if not name.startswith("_")]
