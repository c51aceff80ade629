from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
from hypothesis import strategies as st

from edgehorizon.cfg import Cfg, EdgeKind, parse_cfg
from edgehorizon.horizon import build_edge_horizon_graph, parse_traces
from edgehorizon.scheduler import parse_stats

DATA = Path(__file__).parent / "data"
BENCHMARKS = DATA / "benchmarks"

# Node roles in the worked example: A and B are horizon nodes, s1/s2 seeds.
EX_A, EX_B, EX_C, EX_D = 2, 3, 4, 5
EX_S1, EX_S2 = 6, 7


@pytest.fixture
def example_cfg() -> Cfg:
    return parse_cfg((DATA / "example.cfg").read_bytes())


@pytest.fixture
def example_traces() -> dict[int, set[int]]:
    return parse_traces((DATA / "example.cov").read_bytes())


@pytest.fixture
def example_stats():
    return parse_stats((DATA / "example.stats").read_bytes())


@pytest.fixture
def example_ehg(example_cfg, example_traces):
    return build_edge_horizon_graph(example_cfg, example_traces)


def random_dag_cfg(rng: np.random.Generator, n: int, p: float) -> Cfg:
    """Edges only go from lower to higher id, so the graph is acyclic."""
    edges = [(i, j, EdgeKind.INTRA) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
    return Cfg.build(range(n), edges, 0)


def random_cfg(rng: np.random.Generator, n: int, m: int) -> Cfg:
    """Arbitrary digraph (cycles allowed) with mixed edge kinds."""
    edges = []
    for _ in range(m):
        s, d = rng.integers(0, n, 2).tolist()
        if s != d:
            edges.append((s, d, EdgeKind(int(rng.integers(0, 3)))))
    return Cfg.build(range(n), edges, 0)


def random_traces(rng: np.random.Generator, n: int, n_seeds: int, p: float) -> dict[int, set[int]]:
    return {s: {v for v in range(n) if rng.random() < p} for s in range(n_seeds)}


@st.composite
def cfgs(draw, max_nodes: int = 12, acyclic: bool = False) -> Cfg:
    n = draw(st.integers(1, max_nodes))
    pairs = st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)).filter(lambda e: e[0] != e[1])
    if acyclic:
        pairs = pairs.map(lambda e: (min(e), max(e)))
    raw = draw(st.lists(st.tuples(pairs, st.sampled_from(list(EdgeKind))), max_size=3 * n))
    return Cfg.build(range(n), [(s, d, k) for (s, d), k in raw], 0)


@st.composite
def cfg_with_traces(draw, max_nodes: int = 12, acyclic: bool = False):
    cfg = draw(cfgs(max_nodes, acyclic))
    n = cfg.graph.n
    traces = draw(
        st.dictionaries(st.integers(0, 20), st.sets(st.integers(0, n - 1), max_size=n), max_size=4)
    )
    return cfg, traces


# One line per acceptance criterion, printed after the run.
ACCEPTANCE_RESULTS: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_RESULTS):
            terminalreporter.write_line(ACCEPTANCE_RESULTS[number])
