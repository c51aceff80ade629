"""Synthetic fuzzing campaigns on generated programs.

Ground truth is a hop-decay model: every CFG edge carries the probability
that one mutation which reaches the edge's source also crosses the edge.
A mutation replays its seed's path and tries every edge leaving that path
independently; the first crossing into a never-visited block is new
coverage and mints a new seed whose path is the parent's prefix up to the
branching block followed by the new block.
Reaching k blocks beyond the path needs k independent crossings, so reach
probability falls geometrically with distance.
"""
from __future__ import annotations

import enum
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .centrality import KatzParams, Kind
from .cfg import Cfg, CfgError, format_cfg, parse_cfg
from .scheduler import (
    DEFAULT_REBUILD_INTERVAL,
    Mode,
    MutationBatch,
    SchedulerState,
    alt_strategy,
    choose_seed,
    compute_energy,
    katz_strategy,
    rebuild,
    record_mutation_batch,
    should_recompute,
)


class Strategy(str, enum.Enum):
    KATZ = "katz"
    PAGERANK = "pagerank"
    EIGENVECTOR = "eigenvector"
    DEGREE = "degree"
    RANDOM = "random"
    ROUND_ROBIN = "round_robin"

    @property
    def uses_graph(self) -> bool:
        return self not in (Strategy.RANDOM, Strategy.ROUND_ROBIN)


@dataclass(frozen=True, eq=False)
class SyntheticProgram:
    cfg: Cfg
    traverse_prob: dict[tuple[int, int], float]
    rng_seed: int

    def __post_init__(self) -> None:
        for s, d in self.cfg.graph.edges():
            p = self.traverse_prob.get((s, d))
            if p is None:
                raise ValueError(f"edge {s} -> {d} has no traverse probability")
            if not 0.0 < p <= 1.0:
                raise ValueError(f"traverse probability of {s} -> {d} must lie in (0, 1], got {p}")

    @cached_property
    def prob_array(self) -> np.ndarray:
        """Traverse probability per adjacency entry of ``cfg.graph``."""
        return np.array([self.traverse_prob[e] for e in self.cfg.graph.edges()], dtype=np.float64)


def _geometric_offset(rng: np.random.Generator, mean: float) -> int:
    return int(rng.geometric(1.0 / (1.0 + mean))) - 1


def _draw_prob(rng: np.random.Generator) -> float:
    # Mostly easy branches, a minority of hard comparisons.
    if rng.random() < 0.8:
        return float(rng.uniform(0.1, 0.6))
    return float(10.0 ** rng.uniform(-3.0, -1.5))


def _grow(
    rng: np.random.Generator,
    first: int,
    count: int,
    branching: int,
    depth_bias: float,
    edges: dict[tuple[int, int], float],
    gate: tuple[int, float] | None = None,
) -> None:
    """Add nodes ``first .. first+count-1`` as a DAG rooted at ``first``."""
    last = first + count - 1
    for i in range(first + 1, last + 1):
        if rng.random() < depth_bias:
            parent = max(first, i - 1 - _geometric_offset(rng, 1.0))
        else:
            parent = int(rng.integers(first, i))
        edges[(parent, i)] = _draw_prob(rng)
    for i in range(first, last):
        for _ in range(int(rng.integers(0, branching))):
            j = min(last, i + 1 + _geometric_offset(rng, 8.0))
            edges.setdefault((i, j), _draw_prob(rng))
    if gate is not None:
        src, p = gate
        edges[(src, first)] = p


def generate_program(
    n_nodes: int,
    branching: int = 2,
    depth_bias: float = 0.5,
    rng_seed: int = 0,
    *,
    rare_regions: int = 0,
    rare_fraction: float = 0.25,
    rare_prob: float = 2e-3,
) -> SyntheticProgram:
    """Random connected DAG rooted at node 0 with per-edge traverse probabilities.

    ``depth_bias`` in [0, 1] is the chance a block hangs off a recent block
    rather than a uniformly chosen earlier one; higher means deeper graphs.
    ``rare_regions`` plants that many subgraphs (together ``rare_fraction``
    of the nodes) behind a single gate edge of probability ``rare_prob``.
    """
    if n_nodes < 2:
        raise ValueError("n_nodes must be at least 2")
    if branching < 1:
        raise ValueError("branching must be at least 1")
    if not 0.0 <= depth_bias <= 1.0:
        raise ValueError("depth_bias must lie in [0, 1]")
    if rare_regions < 0 or not 0.0 <= rare_fraction < 1.0 or not 0.0 < rare_prob <= 1.0:
        raise ValueError("invalid rare-region parameters")
    rng = np.random.default_rng(rng_seed)
    rare_total = int(n_nodes * rare_fraction) if rare_regions else 0
    sizes = [rare_total // rare_regions + (k < rare_total % rare_regions) for k in range(rare_regions)]
    sizes = [s for s in sizes if s > 0]
    main = n_nodes - sum(sizes)
    edges: dict[tuple[int, int], float] = {}
    _grow(rng, 0, main, branching, depth_bias, edges)
    first = main
    for size in sizes:
        # Gates sit in the deeper half of the main graph.
        gate_src = int(rng.integers(main // 2, main))
        _grow(rng, first, size, branching, depth_bias, edges, gate=(gate_src, rare_prob))
        first += size
    pairs = sorted(edges)
    ids = np.arange(n_nodes, dtype=np.int64)
    arr = np.array(pairs, dtype=np.int64).reshape(-1, 2)
    cfg = Cfg.from_arrays(ids, arr[:, 0], arr[:, 1], np.zeros(len(arr), dtype=np.int8), 0)
    return SyntheticProgram(cfg, {e: edges[e] for e in pairs}, rng_seed)


@dataclass(frozen=True)
class BenchmarkSpec:
    """Generator arguments for one program of the committed benchmark suite."""

    name: str
    n_nodes: int
    branching: int
    depth_bias: float
    rng_seed: int
    rare_regions: int

    def generate(self) -> SyntheticProgram:
        return generate_program(
            self.n_nodes, self.branching, self.depth_bias, self.rng_seed, rare_regions=self.rare_regions
        )


BENCHMARK_SUITE: tuple[BenchmarkSpec, ...] = tuple(
    BenchmarkSpec(f"b{i:02d}", n, b, d, 1000 + i, r)
    for i, (n, b, d, r) in enumerate(
        [
            (100, 2, 0.5, 1),
            (150, 3, 0.7, 1),
            (250, 4, 0.3, 1),
            (400, 2, 0.7, 2),
            (600, 3, 0.5, 2),
            (800, 4, 0.7, 2),
            (1000, 2, 0.3, 2),
            (1500, 3, 0.7, 3),
            (2000, 4, 0.5, 3),
            (3000, 2, 0.5, 3),
            (4000, 3, 0.3, 3),
            (5000, 4, 0.5, 3),
        ],
        start=1,
    )
)


# -- program files ------------------------------------------------------------


def format_program(program: SyntheticProgram) -> str:
    """CFG text plus ``seed <rng_seed>`` and ``P <src> <dst> <prob>`` lines."""
    lines = [f"seed {program.rng_seed}", format_cfg(program.cfg).rstrip("\n")]
    lines.extend(f"P {s} {d} {p!r}" for (s, d), p in sorted(program.traverse_prob.items()))
    return "\n".join(lines) + "\n"


def parse_program(text: bytes | str) -> SyntheticProgram:
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    cfg_lines = []
    probs: dict[tuple[int, int], float] = {}
    rng_seed = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        parts = raw.split("#", 1)[0].split()
        if parts and parts[0] == "P":
            try:
                s, d, p = int(parts[1]), int(parts[2]), float(parts[3])
            except (IndexError, ValueError):
                raise CfgError("expected 'P <src> <dst> <prob>'", lineno) from None
            if len(parts) != 4:
                raise CfgError("expected 'P <src> <dst> <prob>'", lineno)
            probs[(s, d)] = p
            cfg_lines.append("")
        elif parts and parts[0] == "seed":
            if len(parts) != 2 or not parts[1].isdigit():
                raise CfgError("expected 'seed <rng_seed>'", lineno)
            rng_seed = int(parts[1])
            cfg_lines.append("")
        else:
            cfg_lines.append(raw)
    # Blank placeholders keep CFG error line numbers aligned with the file.
    cfg = parse_cfg("\n".join(cfg_lines))
    try:
        return SyntheticProgram(cfg, probs, rng_seed)
    except ValueError as exc:
        raise CfgError(str(exc)) from None


# -- mutation model -------------------------------------------------------------


class _Fuzzer:
    """Executes mutation batches against a program for one campaign.

    Seeds are kept as ordered block paths from the entry. A mutation tries
    each untaken edge along the path independently. The first crossing into
    a never-visited block ends the mutation; the new input's path is the
    parent's prefix up to the branching block followed by the new block.
    Crossings into blocks that are already covered count as reached but do
    not extend further.
    """

    def __init__(self, program: SyntheticProgram, rng: np.random.Generator) -> None:
        self.program = program
        self.graph = program.cfg.graph
        self.rng = rng
        self.visited = np.zeros(self.graph.n, dtype=bool)
        self.paths: dict[int, np.ndarray] = {}
        self._frontier: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}

    def add_seed(self, seed: int, path: np.ndarray) -> None:
        self.paths[seed] = path
        self.visited[path] = True

    def frontier(self, seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Untaken edges off the seed's path: (path index, target, probability)."""
        cached = self._frontier.get(seed)
        if cached is None:
            g = self.graph
            path = self.paths[seed]
            index = np.full(g.n, -1, dtype=np.int64)
            index[path] = np.arange(len(path))
            leaving = (index[g.sources] >= 0) & (index[g.indices] < 0)
            at = index[g.sources[leaving]]
            order = np.argsort(at, kind="stable")
            cached = (at[order], g.indices[leaving][order], self.program.prob_array[leaving][order])
            self._frontier[seed] = cached
        return cached

    def mutate(self, seed: int, trace: frozenset[int], budget: int) -> tuple[MutationBatch, list[np.ndarray]]:
        at, targets, probs = self.frontier(seed)
        if budget == 0 or len(targets) == 0:
            return MutationBatch(budget, trace), []
        ids = self.graph.ids
        path = self.paths[seed]
        rows, cols = np.nonzero(self.rng.random((budget, len(targets))) < probs)
        hit = ids[targets[cols]].tolist()
        bounds = np.flatnonzero(np.r_[True, rows[1:] != rows[:-1], True]).tolist() if len(rows) else [0]
        extra = [frozenset(hit[a:b]) for a, b in zip(bounds, bounds[1:])]
        found = []
        # Rows are in mutation order and columns in path order, so the first
        # fresh crossing of each row is the one that ends that mutation.
        last_row = -1
        for r, k in zip(rows.tolist(), cols.tolist()):
            if r == last_row or self.visited[targets[k]]:
                continue
            last_row = r
            self.visited[targets[k]] = True
            found.append(np.append(path[: at[k] + 1], targets[k]))
        return MutationBatch(budget, trace, tuple(extra)), found


@dataclass(frozen=True)
class CampaignResult:
    coverage_timeline: list[tuple[int, int]]
    final_corpus_size: int
    strategy_name: str

    @property
    def final_coverage(self) -> int:
        return self.coverage_timeline[-1][1] if self.coverage_timeline else 0

    def to_tsv(self) -> str:
        rows = ["round\tcovered_nodes"]
        rows.extend(f"{r}\t{c}" for r, c in self.coverage_timeline)
        return "\n".join(rows) + "\n"


def run_campaign(
    program: SyntheticProgram,
    strategy: Strategy | str,
    rounds: int,
    base_budget: int,
    rng_seed: int,
    *,
    mode: Mode | str = Mode.PROBABILISTIC,
    params: KatzParams = KatzParams(),
    rebuild_interval: int = DEFAULT_REBUILD_INTERVAL,
    max_mutations: int | None = None,
) -> tuple[CampaignResult, SchedulerState]:
    """Run the scheduling loop for ``rounds`` rounds from a single entry-only seed.

    Queue-mode energies can give a strategy many more mutations per round
    than ``base_budget``. ``max_mutations`` puts every strategy on the same
    footing: the campaign stops once that many mutations have run (the
    last batch is cut short), even if rounds remain.

    Returns the coverage timeline and the final scheduler state (corpus
    and mutation statistics).
    """
    strategy = Strategy(strategy)
    if rounds < 1:
        raise ValueError("rounds must be at least 1")
    if base_budget < 1:
        raise ValueError("base_budget must be at least 1")
    if max_mutations is not None and max_mutations < 1:
        raise ValueError("max_mutations must be at least 1")
    rng = np.random.default_rng(rng_seed)
    cfg = program.cfg
    state = SchedulerState(cfg, {0: frozenset((cfg.entry,))}, mode=mode, rebuild_interval=rebuild_interval)
    fuzzer = _Fuzzer(program, rng)
    fuzzer.add_seed(0, np.array([cfg.graph.position(cfg.entry)]))
    ids = cfg.graph.ids
    if strategy is Strategy.KATZ:
        centrality = katz_strategy(params)
    elif strategy.uses_graph:
        centrality = alt_strategy(Kind(strategy.value), params)
    timeline = []
    cursor = 0
    for r in range(1, rounds + 1):
        if strategy.uses_graph:
            if should_recompute(state) or state.stale:
                rebuild(state, centrality)
            seed = choose_seed(state.ranking, state.mode, rng, state.queue_done)
            budget = compute_energy(seed, state.ranking, base_budget)
        else:
            seeds = list(state.traces)
            if strategy is Strategy.RANDOM:
                seed = seeds[int(rng.integers(len(seeds)))]
            else:
                seed = seeds[cursor % len(seeds)]
                cursor += 1
            budget = base_budget
        if max_mutations is not None:
            budget = min(budget, max_mutations - state.stats.total)
        batch, found = fuzzer.mutate(seed, state.traces[seed], budget)
        next_id = max(state.traces) + 1
        record_mutation_batch(state, seed, batch, [frozenset(ids[p].tolist()) for p in found])
        for k, p in enumerate(found):
            fuzzer.add_seed(next_id + k, p)
        timeline.append((r, len(state.visited)))
        if max_mutations is not None and state.stats.total >= max_mutations:
            break
    return CampaignResult(timeline, len(state.traces), strategy.value), state


def simulate_campaign(
    program: SyntheticProgram,
    strategy: Strategy | str,
    rounds: int,
    base_budget: int,
    rng_seed: int,
    **kwargs,
) -> CampaignResult:
    """:func:`run_campaign` without the final state."""
    return run_campaign(program, strategy, rounds, base_budget, rng_seed, **kwargs)[0]


def _campaign_job(args: tuple) -> CampaignResult:
    program, strategy, rounds, budget, seed, kwargs = args
    return simulate_campaign(program, strategy, rounds, budget, seed, **kwargs)


def run_trials(
    program: SyntheticProgram,
    strategies: Sequence[Strategy | str],
    trials: int,
    rounds: int,
    base_budget: int,
    base_seed: int = 0,
    *,
    jobs: int = 1,
    **kwargs,
) -> dict[str, list[CampaignResult]]:
    """Paired campaigns: trial i of every strategy shares rng seed ``base_seed + i``.

    Results are ordered by trial index whatever ``jobs`` is.
    """
    tasks = [
        (program, Strategy(s), rounds, base_budget, base_seed + i, kwargs)
        for s in strategies
        for i in range(trials)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_campaign_job, tasks))
    else:
        results = [_campaign_job(t) for t in tasks]
    out: dict[str, list[CampaignResult]] = {Strategy(s).value: [] for s in strategies}
    for task, res in zip(tasks, results):
        out[task[1].value].append(res)
    return out


# -- hop decay measurement ---------------------------------------------------------


def random_path(program: SyntheticProgram, rng: np.random.Generator) -> list[int]:
    """Entry-to-sink walk choosing successors uniformly."""
    succ = program.cfg.successor_map
    node = program.cfg.entry
    path = [node]
    while succ[node]:
        node = succ[node][int(rng.integers(len(succ[node])))]
        path.append(node)
    return path


def hop_reach_profile(
    program: SyntheticProgram,
    n_seeds: int = 10,
    mutations_per_seed: int = 1000,
    max_hops: int = 3,
    rng_seed: int = 0,
) -> np.ndarray:
    """Fraction of mutations reaching at least one block k hops off the seed path.

    Entry ``k - 1`` of the result is the k-hop frequency. Each hop is a fresh
    set of independent edge crossings from the blocks reached at the
    previous hop.
    """
    rng = np.random.default_rng(rng_seed)
    succ = program.cfg.successor_map
    prob = program.traverse_prob
    hits = np.zeros(max_hops, dtype=np.int64)
    for _ in range(n_seeds):
        path = random_path(program, rng)
        on_path = set(path)
        first = [(y, prob[(x, y)]) for x in path for y in succ[x] if y not in on_path]
        if not first:
            continue
        ys = np.array([y for y, _ in first])
        ps = np.array([p for _, p in first])
        crossed = rng.random((mutations_per_seed, len(ys))) < ps
        for row in crossed:
            level = set(ys[row].tolist())
            seen = on_path | level
            for k in range(max_hops):
                if not level:
                    break
                hits[k] += 1
                nxt = set()
                for x in level:
                    for y in succ[x]:
                        if y not in seen and rng.random() < prob[(x, y)]:
                            nxt.add(y)
                seen |= nxt
                level = nxt
    return hits / float(n_seeds * mutations_per_seed)
