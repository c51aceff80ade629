"""Centrality-driven seed scheduling loop.

Two energy contracts are supported:

* ``Mode.PROBABILISTIC`` (LibFuzzer style): a seed is drawn with probability
  proportional to its centrality and always gets the base budget.
* ``Mode.ENERGY_QUEUE`` (AFL style): every seed runs once per queue cycle,
  highest score first, with a budget scaled by score over mean score.
"""
from __future__ import annotations

import enum
from collections.abc import Callable, Iterable, Mapping, Sequence, Set
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .centrality import BetaVector, CentralityVector, KatzParams, Kind, alt_centrality, compute_beta, katz_power
from .cfg import Cfg
from .graph import Digraph
from .horizon import CoverageCorpus, EdgeHorizonGraph, NoCoverageError, _horizon_mask, build_edge_horizon_graph

DEFAULT_REBUILD_INTERVAL = 100
DEFAULT_ENERGY_CAP = 16


class Mode(str, enum.Enum):
    PROBABILISTIC = "prob"
    ENERGY_QUEUE = "queue"


class SchedulingError(ValueError):
    pass


class StaleCentralityError(SchedulingError):
    pass


class StatsFormatError(SchedulingError):
    def __init__(self, message: str, line: int | None = None) -> None:
        self.message = message
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass
class MutationStats:
    """Global mutation count T and per-horizon-node reach counts R_i.

    R_i counts mutations that reached a CFG parent of i. Nothing caps R_i at
    T; beta clamping absorbs the excess.
    """

    total: int = 0
    reached_parent: dict[int, int] = field(default_factory=dict)

    def __bool__(self) -> bool:
        return self.total > 0


def parse_stats(text: bytes | str) -> MutationStats:
    """``T <total>`` then ``R <node_id> <count>`` lines."""
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise StatsFormatError(f"input is not UTF-8: {exc}") from None
    stats = MutationStats()
    seen_total = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if not all(p.isdigit() and p.isascii() for p in parts[1:]):
            raise StatsFormatError("counts must be non-negative integers", lineno)
        if parts[0] == "T" and len(parts) == 2:
            if seen_total:
                raise StatsFormatError("T given more than once", lineno)
            stats.total = int(parts[1])
            seen_total = True
        elif parts[0] == "R" and len(parts) == 3:
            node = int(parts[1])
            stats.reached_parent[node] = stats.reached_parent.get(node, 0) + int(parts[2])
        else:
            raise StatsFormatError("expected 'T <total>' or 'R <node_id> <count>'", lineno)
    if not seen_total and stats.reached_parent:
        raise StatsFormatError("R lines without a T line")
    return stats


@dataclass(frozen=True)
class RankEntry:
    seed: int
    score: float
    energy: float


@dataclass(frozen=True)
class SeedRanking:
    entries: tuple[RankEntry, ...]
    mode: Mode

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def seeds(self) -> list[int]:
        return [e.seed for e in self.entries]

    @cached_property
    def _by_seed(self) -> dict[int, RankEntry]:
        return {e.seed: e for e in self.entries}

    @cached_property
    def cumulative_energy(self) -> np.ndarray:
        return np.cumsum([e.energy for e in self.entries])

    @cached_property
    def mean_score(self) -> float:
        return float(np.mean([e.score for e in self.entries])) if self.entries else 0.0

    def entry(self, seed: int) -> RankEntry:
        try:
            return self._by_seed[seed]
        except KeyError:
            raise SchedulingError(f"seed {seed} is not ranked") from None


def _make_ranking(seeds: Sequence[int], scores: Sequence[float], mode: Mode) -> SeedRanking:
    scores_arr = np.asarray(scores, dtype=np.float64)
    seeds_arr = np.asarray(seeds, dtype=np.int64)
    if mode is Mode.PROBABILISTIC:
        total = scores_arr.sum()
        if len(seeds_arr) and total > 0:
            energy = scores_arr / total
        else:
            energy = np.full(len(seeds_arr), 1.0 / max(len(seeds_arr), 1))
    else:
        energy = scores_arr
    order = np.lexsort((seeds_arr, -scores_arr))
    return SeedRanking(
        tuple(RankEntry(int(seeds_arr[i]), float(scores_arr[i]), float(energy[i])) for i in order),
        mode,
    )


def rank_seeds(ehg: EdgeHorizonGraph, c: CentralityVector, mode: Mode | str) -> SeedRanking:
    """Project node centrality onto the seeds and turn it into energies."""
    mode = Mode(mode)
    if not np.array_equal(c.ids, ehg.graph.ids):
        raise StaleCentralityError("centrality was computed on a different graph")
    seeds = ehg.seeds
    values = c.values[ehg.seed_positions()] if seeds else np.zeros(0)
    return _make_ranking(seeds, values, mode)


def uniform_ranking(seeds: Iterable[int], mode: Mode | str) -> SeedRanking:
    """Fallback ranking when there is no coverage to build a graph from."""
    seeds = sorted(seeds)
    return _make_ranking(seeds, [1.0] * len(seeds), Mode(mode))


def choose_seed(
    ranking: SeedRanking,
    mode: Mode | str,
    rng: np.random.Generator,
    done: set[int] | None = None,
) -> int:
    """Pick the next seed.

    Probabilistic mode samples by energy. Queue mode walks the ranking in
    order, skipping seeds in ``done`` (the current cycle); ``done`` is updated
    in place and cleared once every seed has run.
    """
    mode = Mode(mode)
    if not ranking.entries:
        raise SchedulingError("cannot choose from an empty ranking")
    if mode is Mode.PROBABILISTIC:
        cdf = ranking.cumulative_energy
        k = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
        return ranking.entries[min(k, len(ranking.entries) - 1)].seed
    if done is None:
        return ranking.entries[0].seed
    for e in ranking.entries:
        if e.seed not in done:
            done.add(e.seed)
            return e.seed
    done.clear()
    first = ranking.entries[0].seed
    done.add(first)
    return first


def compute_energy(
    seed: int,
    ranking: SeedRanking,
    base_budget: int,
    cap: int = DEFAULT_ENERGY_CAP,
) -> int:
    """Mutation budget for one selection of ``seed``."""
    if base_budget < 1:
        raise ValueError("base_budget must be positive")
    entry = ranking.entry(seed)
    if ranking.mode is Mode.PROBABILISTIC:
        return base_budget
    mean = ranking.mean_score
    if mean <= 0:
        return base_budget
    budget = round(base_budget * entry.score / mean)
    return int(min(max(budget, 1), cap * base_budget))


@dataclass(frozen=True)
class MutationBatch:
    """Nodes reached by a batch of mutations of one seed.

    ``common`` is reached by every mutation (typically the replayed seed
    path); ``extra`` holds what individual mutations reached beyond it.
    Mutations missing from ``extra`` reached only ``common``.
    """

    size: int
    common: frozenset[int] = frozenset()
    extra: tuple[frozenset[int], ...] = ()

    @classmethod
    def from_sets(cls, reached: Sequence[Set[int]]) -> "MutationBatch":
        return cls(len(reached), frozenset(), tuple(frozenset(r) for r in reached))


@dataclass
class SchedulerState:
    cfg: Cfg
    traces: dict[int, frozenset[int]]
    mode: Mode = Mode.PROBABILISTIC
    stats: MutationStats = field(default_factory=MutationStats)
    rebuild_interval: int = DEFAULT_REBUILD_INTERVAL
    rounds_since_rebuild: int = 0
    has_new_coverage: bool = False
    ranking: SeedRanking | None = None
    ehg: EdgeHorizonGraph | None = None
    horizon: frozenset[int] = frozenset()
    queue_done: set[int] = field(default_factory=set)
    visited: set[int] = field(init=False)
    _positions: dict[int, np.ndarray] = field(init=False, repr=False, default_factory=dict)
    _hits: dict[frozenset[int], frozenset[int]] = field(init=False, repr=False, default_factory=dict)
    _node_hits: dict[int, frozenset[int]] = field(init=False, repr=False, default_factory=dict)

    def __post_init__(self) -> None:
        if self.rebuild_interval < 1:
            raise ValueError("rebuild_interval must be positive")
        self.mode = Mode(self.mode)
        self.traces = {s: frozenset(t) for s, t in self.traces.items()}
        self.visited = set().union(*self.traces.values())

    @property
    def stale(self) -> bool:
        return self.ranking is None or sorted(self.ranking.seeds) != sorted(self.traces)

    def horizon_hits(self, nodes: frozenset[int]) -> frozenset[int]:
        """Horizon nodes with a CFG parent in ``nodes`` (memoised until rebuild)."""
        hits = self._hits.get(nodes)
        if hits is None:
            if len(nodes) == 1:
                (node,) = nodes
                return self._hits_of(node)
            found: set[int] = set()
            for node in nodes:
                found.update(self._hits_of(node))
            hits = self._hits[nodes] = frozenset(found)
        return hits

    def _hits_of(self, node: int) -> frozenset[int]:
        hits = self._node_hits.get(node)
        if hits is None:
            horizon = self.horizon
            hits = self._node_hits[node] = frozenset(
                h for h in self.cfg.successor_map.get(node, ()) if h in horizon
            )
        return hits

    def trace_positions(self, seed: int) -> np.ndarray:
        pos = self._positions.get(seed)
        if pos is None:
            pos = self._positions[seed] = np.unique(self.cfg.graph.positions(self.traces[seed]))
        return pos


def should_recompute(state: SchedulerState) -> bool:
    return state.has_new_coverage or not state.stats or state.rounds_since_rebuild >= state.rebuild_interval


def record_mutation_batch(
    state: SchedulerState,
    seed: int,
    batch: MutationBatch,
    new_traces: Iterable[Set[int]] = (),
) -> SchedulerState:
    """Fold one batch into the statistics and corpus.

    Each entry of ``new_traces`` is the full trace of one input produced by
    the batch. Inputs that visit a node outside the current coverage join
    the corpus as new seeds (ids continue after the largest one); the rest
    are dropped.
    """
    state.rounds_since_rebuild += 1
    if seed not in state.traces:
        raise SchedulingError(f"unknown seed {seed}")
    if batch.size:
        state.stats.total += batch.size
    if batch.size and state.horizon:
        counts = state.stats.reached_parent
        base = state.horizon_hits(batch.common)
        for h in base:
            counts[h] = counts.get(h, 0) + batch.size
        for reached in batch.extra:
            for h in state.horizon_hits(reached) - base:
                counts[h] = counts.get(h, 0) + 1
    for trace in new_traces:
        trace = frozenset(trace)
        if trace <= state.visited:
            continue
        state.traces[max(state.traces) + 1] = trace
        state.visited |= trace
        state.has_new_coverage = True
    return state


# -- the scheduling loop ----------------------------------------------------

CentralityFn = Callable[[Digraph, BetaVector], CentralityVector]


def katz_strategy(params: KatzParams = KatzParams()) -> CentralityFn:
    return lambda graph, beta: katz_power(graph, params, beta)


def alt_strategy(kind: Kind | str, params: KatzParams = KatzParams()) -> CentralityFn:
    return lambda graph, beta: alt_centrality(graph, kind, params, beta)


def rebuild(state: SchedulerState, centrality: CentralityFn) -> SchedulerState:
    """Rebuild the edge horizon graph and ranking from the current corpus."""
    cfg = state.cfg
    corpus = CoverageCorpus.from_positions(cfg, {s: state.trace_positions(s) for s in state.traces})
    state.horizon = frozenset(cfg.graph.ids[_horizon_mask(cfg, corpus.visited_mask)].tolist())
    try:
        state.ehg = build_edge_horizon_graph(cfg, corpus)
    except NoCoverageError:
        state.ehg = None
        state.ranking = uniform_ranking(state.traces, state.mode)
    else:
        beta = compute_beta(state.horizon, state.stats)
        state.ranking = rank_seeds(state.ehg, centrality(state.ehg.graph, beta), state.mode)
    state._hits.clear()
    state._node_hits.clear()
    state.rounds_since_rebuild = 0
    state.has_new_coverage = False
    return state
