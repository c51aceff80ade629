"""Out-degree centralities over directed graphs.

Katz is computed with the synchronous power method

    c(0) = beta,    c(t) = alpha * A @ c(t-1) + beta

where ``A[i, j] = 1`` for an edge i -> j, so a node's score accumulates the
decayed scores of its successors. PageRank, eigenvector and degree variants
are provided for comparison runs.
"""
from __future__ import annotations

import enum
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from functools import cached_property
from typing import TYPE_CHECKING

import numpy as np

from .graph import Digraph

if TYPE_CHECKING:
    from .scheduler import MutationStats

DENSE_ORACLE_MAX_NODES = 2000
PAGERANK_DAMPING = 0.85


class SingularSystemError(ArithmeticError):
    """``I - alpha*A`` is singular: alpha is at or beyond 1/lambda_max."""


@dataclass(frozen=True)
class KatzParams:
    alpha: float = 0.5
    tolerance: float = 1e-9
    max_iterations: int = 1000

    def __post_init__(self) -> None:
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError(f"alpha must lie in [0, 1), got {self.alpha}")
        if not self.tolerance > 0:
            raise ValueError(f"tolerance must be positive, got {self.tolerance}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be positive, got {self.max_iterations}")


class BetaVector(Mapping[int, float]):
    """Per-node bias in [0, 1]; nodes without an entry get 1.0."""

    default = 1.0

    def __init__(self, values: Mapping[int, float] | None = None) -> None:
        values = dict(values or {})
        for node, b in values.items():
            if not 0.0 <= b <= 1.0:
                raise ValueError(f"beta for node {node} must lie in [0, 1], got {b}")
        self._values = values

    def __getitem__(self, node: int) -> float:
        return self._values.get(node, self.default)

    def __iter__(self):
        return iter(self._values)

    def __len__(self) -> int:
        return len(self._values)

    def __contains__(self, node: object) -> bool:
        return node in self._values

    def as_array(self, graph: Digraph) -> np.ndarray:
        b = np.full(graph.n, self.default)
        if self._values:
            b[graph.positions(self._values)] = list(self._values.values())
        return b

    def __repr__(self) -> str:
        return f"BetaVector({self._values!r})"


@dataclass(frozen=True, eq=False)
class CentralityVector:
    ids: np.ndarray
    values: np.ndarray
    iterations_used: int
    converged: bool
    history: list[np.ndarray] | None = field(default=None, repr=False)

    @cached_property
    def scores(self) -> dict[int, float]:
        return dict(zip(self.ids.tolist(), self.values.tolist()))

    def __getitem__(self, node: int) -> float:
        return self.scores[node]

    def iterate(self, t: int) -> dict[int, float]:
        """Scores after iteration ``t`` (``t = 0`` is the starting vector)."""
        if self.history is None:
            raise ValueError("iterates were not recorded; pass record=True")
        return dict(zip(self.ids.tolist(), self.history[t].tolist()))

    def ranked(self) -> list[tuple[int, float]]:
        """(node, score) by descending score, ties by ascending node id."""
        order = np.lexsort((self.ids, -self.values))
        return list(zip(self.ids[order].tolist(), self.values[order].tolist()))


def compute_beta(horizon: Iterable[int], stats: "MutationStats") -> BetaVector:
    """beta_h = 1 - R_h / T for horizon nodes, clamped to [0, 1]; 1 elsewhere."""
    total = stats.total
    if total <= 0:
        return BetaVector()
    values = {}
    for h in horizon:
        reached = stats.reached_parent.get(h, 0)
        # (T - R) / T rather than 1 - R/T: same value, exact for decimal fixtures.
        values[h] = min(1.0, max(0.0, (total - reached) / total))
    return BetaVector(values)


def _beta_array(graph: Digraph, beta: BetaVector | Mapping[int, float] | np.ndarray | None) -> np.ndarray:
    if beta is None:
        return np.ones(graph.n)
    if isinstance(beta, np.ndarray):
        if beta.shape != (graph.n,):
            raise ValueError("beta array must have one entry per node")
        return beta.astype(np.float64)
    if not isinstance(beta, BetaVector):
        beta = BetaVector(beta)
    return beta.as_array(graph)


def katz_power(
    graph: Digraph,
    params: KatzParams = KatzParams(),
    beta: BetaVector | Mapping[int, float] | np.ndarray | None = None,
    *,
    record: bool = False,
) -> CentralityVector:
    """Katz centrality by power iteration.

    Stops once the L-infinity change between successive iterates drops
    below ``params.tolerance``. Divergence (alpha past 1/lambda_max on a
    cyclic graph, or overflow on a deep DAG with many paths) shows up as
    ``converged=False``, never as an exception; iteration stops early once
    a score is no longer finite.
    """
    b = _beta_array(graph, beta)
    rows, cols, n = graph.sources, graph.indices, graph.n
    alpha = params.alpha
    c = b.copy()
    history = [c] if record else None
    converged = False
    t = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(1, params.max_iterations + 1):
            # Row sums of A @ c; bincount adds in CSR order like a sparse matvec.
            nxt = alpha * np.bincount(rows, weights=c[cols], minlength=n) + b
            delta = np.max(np.abs(nxt - c)) if n else 0.0
            c = nxt
            if history is not None:
                history.append(c)
            if delta < params.tolerance:
                converged = True
                break
            if not np.isfinite(delta):
                break
    return CentralityVector(graph.ids, c, t, converged, history)


def katz_dense_oracle(
    graph: Digraph,
    alpha: float,
    beta: BetaVector | Mapping[int, float] | np.ndarray | None = None,
) -> CentralityVector:
    """Closed-form Katz scores from a dense solve of ``(I - alpha*A) c = beta``."""
    if graph.n > DENSE_ORACLE_MAX_NODES:
        raise ValueError(f"dense oracle is limited to {DENSE_ORACLE_MAX_NODES} nodes, got {graph.n}")
    b = _beta_array(graph, beta)
    system = np.eye(graph.n) - alpha * graph.adjacency().toarray()
    if graph.n and np.linalg.cond(system) > 1.0 / np.finfo(float).eps:
        raise SingularSystemError(f"I - {alpha}*A is singular")
    try:
        c = np.linalg.solve(system, b)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(f"I - {alpha}*A is singular") from exc
    return CentralityVector(graph.ids, c, 0, True)


def truncated_expansion(
    graph: Digraph,
    alpha: float,
    beta: BetaVector | Mapping[int, float] | np.ndarray | None,
    k: int,
) -> CentralityVector:
    """sum_{j=0..k} alpha^j A^j beta, built term by term.

    ``converged`` is True when the last term vanished, which on a DAG
    happens once ``k`` exceeds the longest path.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    adj = graph.adjacency()
    term = _beta_array(graph, beta)
    total = term.copy()
    for _ in range(k):
        term = alpha * (adj @ term)
        total += term
    return CentralityVector(graph.ids, total, k, not term.any())


class Kind(str, enum.Enum):
    PAGERANK = "pagerank"
    EIGENVECTOR = "eigenvector"
    DEGREE = "degree"


def _eigenvector(graph: Digraph, params: KatzParams, b: np.ndarray) -> CentralityVector:
    # Same series as Katz with alpha = 1, carried as a unit vector plus an
    # inverse scale so that cyclic graphs tend to the principal eigenvector
    # instead of overflowing.
    adj = graph.adjacency()
    norm = np.linalg.norm(b)
    if norm == 0:
        return CentralityVector(graph.ids, np.zeros(graph.n), 0, True)
    x, inv_scale = b / norm, 1.0 / norm
    converged = False
    t = 0
    # The fading beta term can make one step a no-op by accident, so the
    # tolerance must hold twice in a row.
    calm = 0
    for t in range(1, params.max_iterations + 1):
        y = adj @ x + b * inv_scale
        norm = np.linalg.norm(y)
        nxt = y / norm
        inv_scale /= norm
        delta = np.max(np.abs(nxt - x))
        x = nxt
        calm = calm + 1 if delta < params.tolerance else 0
        if calm == 2:
            converged = True
            break
    return CentralityVector(graph.ids, x, t, converged)


def _pagerank(graph: Digraph, params: KatzParams, damping: float) -> CentralityVector:
    # Reversed roles: each node hands its score to its CFG predecessors,
    # split evenly, so influence flows back toward the nodes that reach it.
    n = graph.n
    adj = graph.adjacency()
    indeg = graph.in_degree().astype(np.float64)
    dangling = indeg == 0
    safe = np.where(dangling, 1.0, indeg)
    x = np.full(n, 1.0 / n)
    converged = False
    t = 0
    for t in range(1, params.max_iterations + 1):
        nxt = damping * (adj @ (x / safe)) + (damping * x[dangling].sum() + 1.0 - damping) / n
        delta = np.max(np.abs(nxt - x))
        x = nxt
        if delta < params.tolerance:
            converged = True
            break
    return CentralityVector(graph.ids, x, t, converged)


def alt_centrality(
    graph: Digraph,
    kind: Kind | str,
    params: KatzParams = KatzParams(),
    beta: BetaVector | Mapping[int, float] | np.ndarray | None = None,
    *,
    damping: float = PAGERANK_DAMPING,
) -> CentralityVector:
    """Out-degree PageRank, eigenvector (Katz at alpha = 1) or degree centrality.

    ``beta`` is only used by the eigenvector variant; ``params.alpha`` is ignored.
    """
    kind = Kind(kind)
    if graph.n == 0:
        raise ValueError("centrality of an empty graph is undefined")
    if kind is Kind.DEGREE:
        return CentralityVector(graph.ids, graph.out_degree().astype(np.float64), 0, True)
    if kind is Kind.EIGENVECTOR:
        return _eigenvector(graph, params, _beta_array(graph, beta))
    return _pagerank(graph, params, damping)
