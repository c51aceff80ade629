"""Edge horizon graph construction.

The pipeline turns a CFG plus per-seed coverage into a DAG whose nodes are
the seeds, the horizon nodes (unvisited blocks with a visited parent) and
the rest of the unvisited region:

    classify_nodes -> horizon_nodes -> insert_seed_nodes
        -> splice_visited -> remove_loops

Unvisited nodes keep their CFG id in the result. Seed nodes get fresh ids
above the largest CFG id, assigned in ascending seed-id order.
"""
from __future__ import annotations

from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .cfg import Cfg
from .graph import Digraph, UnknownNodeError, lookup, topological_order


class CoverageError(ValueError):
    pass


class NoCoverageError(CoverageError):
    """No node is visited yet, so no horizon exists; schedule uniformly instead."""


class CoverageCorpus:
    """Per-seed traces plus the visited/unvisited partition of one CFG."""

    def __init__(self, cfg: Cfg, trace_positions: Mapping[int, np.ndarray]) -> None:
        self.cfg = cfg
        self._positions = dict(sorted(trace_positions.items()))
        mask = np.zeros(cfg.graph.n, dtype=bool)
        for pos in self._positions.values():
            mask[pos] = True
        self.visited_mask = mask

    @classmethod
    def from_positions(cls, cfg: Cfg, trace_positions: Mapping[int, np.ndarray]) -> "CoverageCorpus":
        """Fast path for callers that already hold node positions (the simulator)."""
        return cls(cfg, trace_positions)

    @property
    def seeds(self) -> list[int]:
        return list(self._positions)

    def trace_positions(self, seed: int) -> np.ndarray:
        return self._positions[seed]

    @cached_property
    def traces(self) -> dict[int, frozenset[int]]:
        ids = self.cfg.graph.ids
        return {s: frozenset(ids[p].tolist()) for s, p in self._positions.items()}

    @cached_property
    def visited(self) -> frozenset[int]:
        return frozenset(self.cfg.graph.ids[self.visited_mask].tolist())

    @cached_property
    def unvisited(self) -> frozenset[int]:
        return frozenset(self.cfg.graph.ids[~self.visited_mask].tolist())

    def __repr__(self) -> str:
        return f"CoverageCorpus(seeds={len(self._positions)}, visited={int(self.visited_mask.sum())})"


def classify_nodes(cfg: Cfg, traces: Mapping[int, Iterable[int]]) -> CoverageCorpus:
    """Split ``cfg.nodes`` into visited (on some trace) and unvisited."""
    positions = {}
    for seed, nodes in traces.items():
        if seed < 0:
            raise CoverageError(f"seed id {seed} is negative")
        try:
            positions[seed] = np.unique(cfg.graph.positions(nodes))
        except UnknownNodeError as exc:
            raise CoverageError(f"trace of seed {seed} references unknown node {exc.args[0]}") from None
    return CoverageCorpus(cfg, positions)


def _horizon_mask(cfg: Cfg, visited: np.ndarray) -> np.ndarray:
    g = cfg.graph
    crossing = visited[g.sources] & ~visited[g.indices]
    mask = np.zeros(g.n, dtype=bool)
    mask[g.indices[crossing]] = True
    return mask


def horizon_nodes(cfg: Cfg, corpus: CoverageCorpus) -> frozenset[int]:
    """Unvisited nodes with at least one visited CFG parent."""
    return frozenset(cfg.graph.ids[_horizon_mask(cfg, corpus.visited_mask)].tolist())


@dataclass(frozen=True, eq=False)
class EdgeHorizonGraph:
    graph: Digraph
    seed_nodes: dict[int, int]
    horizon_nodes: frozenset[int]
    # Unvisited nodes keep their CFG id; only seed nodes are renumbered.
    _seed_of: dict[int, int] = field(repr=False, default_factory=dict)

    def __post_init__(self) -> None:
        if not self._seed_of:
            self._seed_of.update({node: seed for seed, node in self.seed_nodes.items()})

    def origin(self, node: int) -> int | None:
        """Original CFG node, or ``None`` for seed nodes."""
        if node in self._seed_of:
            return None
        if node not in self.graph:
            raise UnknownNodeError(node)
        return node

    def seed_of(self, node: int) -> int | None:
        return self._seed_of.get(node)

    @property
    def seeds(self) -> list[int]:
        return sorted(self.seed_nodes)

    def seed_positions(self) -> np.ndarray:
        """Graph positions of the seed nodes, in ascending seed-id order."""
        return self.graph.positions(self.seed_nodes[s] for s in self.seeds)

    def __repr__(self) -> str:
        return (
            f"EdgeHorizonGraph(nodes={self.graph.n}, edges={self.graph.m}, "
            f"seeds={len(self.seed_nodes)}, horizon={len(self.horizon_nodes)})"
        )


def _seed_node_ids(cfg: Cfg, seeds: list[int]) -> np.ndarray:
    base = int(cfg.graph.ids[-1]) + 1 if cfg.graph.n else 0
    return base + np.arange(len(seeds), dtype=np.int64)


def _seed_horizon_pairs(cfg: Cfg, corpus: CoverageCorpus, horizon: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(seed index, horizon cfg position) pairs; seed index follows ``corpus.seeds``."""
    g = cfg.graph
    seeds = corpus.seeds
    if not seeds:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    lens = [len(corpus.trace_positions(s)) for s in seeds]
    indptr = np.zeros(len(seeds) + 1, dtype=np.int64)
    np.cumsum(lens, out=indptr[1:])
    cols = np.concatenate([corpus.trace_positions(s) for s in seeds]) if indptr[-1] else np.zeros(0, np.int64)
    traces = sp.csr_matrix((np.ones(len(cols)), cols, indptr), shape=(len(seeds), g.n))
    # Keep only adjacency columns that land on horizon nodes.
    keep = horizon[g.indices]
    adj = sp.csr_matrix(
        (np.ones(int(keep.sum())), (g.sources[keep], g.indices[keep])), shape=(g.n, g.n)
    )
    hits = (traces @ adj).tocoo()
    order = np.lexsort((hits.col, hits.row))
    return hits.row[order].astype(np.int64), hits.col[order].astype(np.int64)


def insert_seed_nodes(cfg: Cfg, corpus: CoverageCorpus, horizon: Iterable[int]) -> EdgeHorizonGraph:
    """Seed nodes wired to horizon nodes whose parent lies on the seed's own trace.

    The result holds only seed and horizon nodes; it is the first stage of
    the full edge horizon graph.
    """
    g = cfg.graph
    hmask = np.zeros(g.n, dtype=bool)
    hmask[g.positions(horizon)] = True
    seeds = corpus.seeds
    seed_ids = _seed_node_ids(cfg, seeds)
    rows, cols = _seed_horizon_pairs(cfg, corpus, hmask)
    h_ids = g.ids[hmask]
    ids = np.concatenate([h_ids, seed_ids])
    src = lookup(ids, seed_ids[rows])
    dst = lookup(ids, g.ids[cols])
    return EdgeHorizonGraph(
        graph=Digraph.from_positions(ids, src, dst),
        seed_nodes=dict(zip(seeds, seed_ids.tolist())),
        horizon_nodes=frozenset(h_ids.tolist()),
    )


def _bits_to_indices(bits: int, nbytes: int) -> np.ndarray:
    raw = np.frombuffer(bits.to_bytes(nbytes, "little"), dtype=np.uint8)
    return np.flatnonzero(np.unpackbits(raw, bitorder="little"))


def _spliced_edges(cfg: Cfg, visited: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Edges u -> w between unvisited CFG positions joined by an all-visited path.

    Returns (src, dst, return_only) over CFG positions. Direct unvisited
    edges keep their Return flag; edges through visited blocks are plain.
    """
    g = cfg.graph
    src, dst, kind = cfg.edge_arrays()
    direct = ~visited[src] & ~visited[dst]
    out_src = [src[direct]]
    out_dst = [dst[direct]]
    out_ret = [kind[direct] == 2]

    into_visited = ~visited[g.sources] & visited[g.indices]
    if into_visited.any():
        vpos = np.flatnonzero(visited)
        vindex = np.full(g.n, -1, dtype=np.int64)
        vindex[vpos] = np.arange(len(vpos))
        inner = visited[g.sources] & visited[g.indices]
        sub = sp.csr_matrix(
            (np.ones(int(inner.sum())), (vindex[g.sources[inner]], vindex[g.indices[inner]])),
            shape=(len(vpos), len(vpos)),
        )
        ncomp, comp = connected_components(sub, directed=True, connection="strong")
        # Condensation DAG over strongly connected visited components.
        csrc, cdst = comp[vindex[g.sources[inner]]], comp[vindex[g.indices[inner]]]
        cross = csrc != cdst
        cdag = Digraph.from_positions(np.arange(ncomp), csrc[cross], cdst[cross])

        exits_mask = visited[g.sources] & ~visited[g.indices]
        targets = np.unique(g.indices[exits_mask])  # horizon positions
        tindex = np.full(g.n, -1, dtype=np.int64)
        tindex[targets] = np.arange(len(targets))
        nbytes = (len(targets) + 7) // 8

        bits = [0] * ncomp
        for c, t in zip(comp[vindex[g.sources[exits_mask]]].tolist(), tindex[g.indices[exits_mask]].tolist()):
            bits[c] |= 1 << t
        indptr, indices = cdag.indptr.tolist(), cdag.indices.tolist()
        for c in reversed(topological_order(cdag)):
            acc = bits[c]
            for d in indices[indptr[c] : indptr[c + 1]]:
                acc |= bits[d]
            bits[c] = acc

        u_side = g.sources[into_visited]
        v_comp = comp[vindex[g.indices[into_visited]]]
        order = np.argsort(u_side, kind="stable")
        u_side, v_comp = u_side[order], v_comp[order]
        starts = np.flatnonzero(np.r_[True, u_side[1:] != u_side[:-1]])
        ends = np.r_[starts[1:], len(u_side)]
        decoded: dict[int, np.ndarray] = {}
        for a, b in zip(starts.tolist(), ends.tolist()):
            acc = 0
            for c in v_comp[a:b].tolist():
                acc |= bits[c]
            if acc:
                reach = decoded.get(acc)
                if reach is None:
                    reach = decoded[acc] = targets[_bits_to_indices(acc, nbytes)]
                reach = reach[reach != u_side[a]]
                out_src.append(np.full(len(reach), u_side[a], dtype=np.int64))
                out_dst.append(reach)
                out_ret.append(np.zeros(len(reach), dtype=bool))
    return np.concatenate(out_src), np.concatenate(out_dst), np.concatenate(out_ret)


def splice_visited(cfg: Cfg, corpus: CoverageCorpus) -> Digraph:
    """Graph over unvisited nodes that keeps reachability through deleted nodes.

    u -> w is present iff the CFG has a path from u to w whose intermediate
    nodes are all visited (a direct edge counts). A path that returns to u
    through visited blocks would be a self-loop and is dropped.
    """
    visited = corpus.visited_mask
    src, dst, ret = _spliced_edges(cfg, visited)
    upos = np.flatnonzero(~visited)
    uindex = np.full(cfg.graph.n, -1, dtype=np.int64)
    uindex[upos] = np.arange(len(upos))
    return Digraph.from_positions(cfg.graph.ids[upos], uindex[src], uindex[dst], ret)


def _back_edges(g: Digraph) -> np.ndarray:
    """Flag DFS back edges, rooting at zero in-degree nodes in ascending id order."""
    n = g.n
    indptr, indices = g.indptr.tolist(), g.indices.tolist()
    color = [0] * n  # 0 white, 1 on stack, 2 done
    drop = np.zeros(g.m, dtype=bool)
    indeg = g.in_degree()
    roots = np.flatnonzero(indeg == 0).tolist() + np.flatnonzero(indeg != 0).tolist()
    for root in roots:
        if color[root]:
            continue
        color[root] = 1
        stack = [(root, indptr[root])]
        while stack:
            node, k = stack[-1]
            if k == indptr[node + 1]:
                color[node] = 2
                stack.pop()
                continue
            stack[-1] = (node, k + 1)
            child = indices[k]
            if color[child] == 0:
                color[child] = 1
                stack.append((child, indptr[child]))
            elif color[child] == 1:
                drop[k] = True
    return drop


def remove_loops(g: Digraph) -> Digraph:
    """Make ``g`` acyclic: drop Return edges, then DFS back edges."""
    if g.return_only is not None and g.return_only.any():
        g = g.subgraph_without(g.return_only)
    if g.is_acyclic():
        return g
    return g.subgraph_without(_back_edges(g))


def build_edge_horizon_graph(cfg: Cfg, traces: Mapping[int, Iterable[int]] | CoverageCorpus) -> EdgeHorizonGraph:
    """Run the whole construction; raises :class:`NoCoverageError` if nothing is visited."""
    corpus = traces if isinstance(traces, CoverageCorpus) else classify_nodes(cfg, traces)
    visited = corpus.visited_mask
    if not visited.any():
        raise NoCoverageError("no visited nodes: the corpus has no coverage yet")
    g = cfg.graph
    hmask = _horizon_mask(cfg, visited)
    seeds = corpus.seeds
    seed_ids = _seed_node_ids(cfg, seeds)
    rows, cols = _seed_horizon_pairs(cfg, corpus, hmask)
    src, dst, ret = _spliced_edges(cfg, visited)

    upos = np.flatnonzero(~visited)
    ids = np.concatenate([g.ids[upos], seed_ids])
    # Positions in ``ids``: unvisited nodes first (CFG order), seeds after.
    new_pos = np.full(g.n, -1, dtype=np.int64)
    new_pos[upos] = np.arange(len(upos))
    seed_pos = len(upos) + rows
    all_src = np.concatenate([new_pos[src], seed_pos])
    all_dst = np.concatenate([new_pos[dst], new_pos[cols]])
    all_ret = np.concatenate([ret, np.zeros(len(rows), dtype=bool)])
    ehg = Digraph.from_positions(ids, all_src, all_dst, all_ret)
    return EdgeHorizonGraph(
        graph=remove_loops(ehg),
        seed_nodes=dict(zip(seeds, seed_ids.tolist())),
        horizon_nodes=frozenset(g.ids[hmask].tolist()),
    )


# -- text formats -----------------------------------------------------------


class TraceFormatError(CoverageError):
    def __init__(self, message: str, line: int | None = None) -> None:
        self.message = message
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def parse_traces(text: bytes | str) -> dict[int, set[int]]:
    """Parse ``S <seed_id> <node_id> ...`` lines; repeated seed lines merge."""
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise TraceFormatError(f"input is not UTF-8: {exc}") from None
    traces: dict[int, set[int]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] != "S" or len(parts) < 2:
            raise TraceFormatError(f"expected 'S <seed_id> <node_id> ...', got {line!r}", lineno)
        if not all(p.isdigit() and p.isascii() for p in parts[1:]):
            raise TraceFormatError("ids must be non-negative decimal integers", lineno)
        seed = int(parts[1])
        traces.setdefault(seed, set()).update(int(p) for p in parts[2:])
    return traces


def format_edge_horizon_graph(ehg: EdgeHorizonGraph) -> str:
    g = ehg.graph
    lines = [f"N {node}" for node in g.ids.tolist()]
    lines.extend(f"E {u} {v} intra" for u, v in g.edges())
    lines.extend(f"H {h}" for h in sorted(ehg.horizon_nodes))
    lines.extend(f"SEED {s} {ehg.seed_nodes[s]}" for s in ehg.seeds)
    return "\n".join(lines) + "\n"


def parse_edge_horizon_graph(text: bytes | str) -> EdgeHorizonGraph:
    """Read back the output of :func:`format_edge_horizon_graph`.

    Edge kinds are accepted but ignored: a dumped graph is already acyclic.
    """
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise TraceFormatError(f"input is not UTF-8: {exc}") from None
    nodes: list[int] = []
    edges: list[tuple[int, int]] = []
    horizon: set[int] = set()
    seeds: dict[int, int] = {}
    arity = {"N": 2, "E": 4, "H": 2, "SEED": 3}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        head = parts[0]
        if head not in arity:
            raise TraceFormatError(f"unknown directive {head!r}", lineno)
        if len(parts) != arity[head]:
            raise TraceFormatError(f"wrong number of fields for {head!r}", lineno)
        nums = parts[1:3] if head == "E" else parts[1:]
        if not all(p.isdigit() and p.isascii() for p in nums):
            raise TraceFormatError("ids must be non-negative decimal integers", lineno)
        if head == "N":
            nodes.append(int(parts[1]))
        elif head == "E":
            edges.append((int(parts[1]), int(parts[2])))
        elif head == "H":
            horizon.add(int(parts[1]))
        else:
            seeds[int(parts[1])] = int(parts[2])
    if len(set(nodes)) != len(nodes):
        raise TraceFormatError("duplicate node declaration")
    try:
        graph = Digraph.from_edges(nodes, edges)
    except UnknownNodeError as exc:
        raise TraceFormatError(f"edge endpoint {exc.args[0]} is not declared") from None
    for node in list(horizon) + list(seeds.values()):
        if node not in graph:
            raise TraceFormatError(f"node {node} is not declared")
    return EdgeHorizonGraph(graph=graph, seed_nodes=dict(sorted(seeds.items())), horizon_nodes=frozenset(horizon))
