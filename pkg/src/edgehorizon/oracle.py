"""Ground-truth seed values and rank agreement.

The oracle value of a seed is the number of distinct feasible edges it can
reach in the edge horizon graph, where feasible means the edge was covered
by a reference campaign. A centrality is useful for scheduling when its
seed ranking agrees with this count, which :func:`kendall_tau` measures.
"""
from __future__ import annotations

import itertools
import math
from collections.abc import Iterable, Mapping
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .horizon import EdgeHorizonGraph

EXACT_P_MAX_N = 8
ASYMPTOTIC_P_MIN_N = 31


class UnknownSeedError(KeyError):
    pass


def feasible_edges(ehg: EdgeHorizonGraph, covered: Iterable[int]) -> frozenset[tuple[int, int]]:
    """Edges of ``ehg`` whose endpoints were covered by a reference run.

    Seed nodes count as covered. Both endpoints are compared by their
    original CFG id.
    """
    covered = set(covered)
    out = set()
    for u, v in ehg.graph.edges():
        if ehg.origin(v) in covered and (ehg.seed_of(u) is not None or u in covered):
            out.add((u, v))
    return frozenset(out)


def reachable_edge_oracle(
    ehg: EdgeHorizonGraph,
    seed: int,
    feasible: Iterable[tuple[int, int]] | None = None,
) -> int:
    """Distinct feasible edges on some path from the seed's node.

    Only feasible edges are walked, so an edge that sits behind an
    infeasible one does not count. ``feasible=None`` allows every edge.
    """
    if seed not in ehg.seed_nodes:
        raise UnknownSeedError(f"seed {seed} is not in the edge horizon graph")
    allowed = None if feasible is None else set(feasible)
    graph = ehg.graph
    start = ehg.seed_nodes[seed]
    seen_nodes = {start}
    stack = [start]
    count = 0
    while stack:
        u = stack.pop()
        for v in graph.successors(u):
            if allowed is not None and (u, v) not in allowed:
                continue
            count += 1  # each (u, v) is met once, when u is expanded
            if v not in seen_nodes:
                seen_nodes.add(v)
                stack.append(v)
    return count


def oracle_counts(
    ehg: EdgeHorizonGraph,
    feasible: Iterable[tuple[int, int]] | None = None,
) -> dict[int, int]:
    allowed = None if feasible is None else frozenset(feasible)
    return {s: reachable_edge_oracle(ehg, s, allowed) for s in ehg.seeds}


@dataclass(frozen=True)
class RankAgreement:
    """Kendall tau-b with a two-sided p-value for independence.

    ``tau`` and ``p_value`` are NaN when either ranking is constant.
    """

    tau: float
    p_value: float
    n: int


def _pair_signs(x: np.ndarray) -> np.ndarray:
    i, j = np.triu_indices(x.shape[-1], k=1)
    return np.sign(x[..., i] - x[..., j])


def _exact_p(a: np.ndarray, b: np.ndarray) -> float:
    # Permutation test: every reordering of b is equally likely under
    # independence, and the tie structure (hence the tau-b denominator)
    # is the same for all of them, so comparing numerators suffices.
    sa = _pair_signs(a)
    observed = abs(float(sa @ _pair_signs(b)))
    perms = np.array(list(itertools.permutations(range(len(b)))))
    numerators = np.abs(_pair_signs(b[perms]) @ sa)
    return float(np.mean(numerators >= observed - 1e-9))


def kendall_tau(ranking_a: Mapping[object, float], ranking_b: Mapping[object, float]) -> RankAgreement:
    """Tie-corrected tau between two score maps over the same keys.

    The p-value is exact by enumerating permutations for n <= 8, comes from
    scipy's exact null distribution for untied samples up to n = 30, and
    uses the tie-corrected normal approximation otherwise.
    """
    if set(ranking_a) != set(ranking_b):
        raise ValueError("rankings must cover the same keys")
    n = len(ranking_a)
    if n < 2:
        raise ValueError("kendall tau needs at least two items")
    keys = sorted(ranking_a, key=repr)
    a = np.array([ranking_a[k] for k in keys], dtype=np.float64)
    b = np.array([ranking_b[k] for k in keys], dtype=np.float64)
    if np.all(a == a[0]) or np.all(b == b[0]):
        return RankAgreement(math.nan, math.nan, n)
    method = "asymptotic" if n >= ASYMPTOTIC_P_MIN_N else "auto"
    res = stats.kendalltau(a, b, variant="b", method=method)
    tau = float(np.clip(res.statistic, -1.0, 1.0))
    p = _exact_p(a, b) if n <= EXACT_P_MAX_N else float(res.pvalue)
    return RankAgreement(tau, min(1.0, max(0.0, p)), n)
