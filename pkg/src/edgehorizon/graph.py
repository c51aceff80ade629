"""Compact immutable directed graph over integer node ids.

Nodes are kept in a sorted ``int64`` array and adjacency is stored in CSR
form over node *positions*, with successors deduplicated and sorted in
ascending id order. Everything downstream (CFGs, edge horizon graphs,
centrality) works on this one structure.
"""
from __future__ import annotations

from collections.abc import Iterable, Iterator
from functools import cached_property

import numpy as np
import scipy.sparse as sp


class UnknownNodeError(KeyError):
    pass


def lookup(ids: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Positions of ``values`` in the sorted array ``ids``; all must be present."""
    values = np.asarray(values, dtype=np.int64)
    if len(values) == 0:
        return np.zeros(0, dtype=np.int64)
    if len(ids) == 0:
        raise UnknownNodeError(int(values[0]))
    pos = np.searchsorted(ids, values)
    bad = (pos >= len(ids)) | (ids[np.minimum(pos, len(ids) - 1)] != values)
    if bad.any():
        raise UnknownNodeError(int(values[bad][0]))
    return pos


class Digraph:
    """Directed 0/1 graph: parallel edges collapse, self-loops are allowed."""

    def __init__(
        self,
        ids: np.ndarray,
        indptr: np.ndarray,
        indices: np.ndarray,
        return_only: np.ndarray | None = None,
    ) -> None:
        self.ids = ids
        self.indptr = indptr
        self.indices = indices
        # Per adjacency entry: True when the edge exists only as a Return edge.
        self.return_only = return_only

    @classmethod
    def from_positions(
        cls,
        ids: np.ndarray,
        src: np.ndarray,
        dst: np.ndarray,
        return_only: np.ndarray | None = None,
    ) -> "Digraph":
        """Build from edge endpoints given as positions into sorted ``ids``.

        Duplicate (src, dst) pairs collapse; the merged edge is return-only
        only if every duplicate was.
        """
        n = len(ids)
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        if len(src):
            key = src * n + dst
            order = np.argsort(key, kind="stable")
            key = key[order]
            first = np.ones(len(key), dtype=bool)
            first[1:] = key[1:] != key[:-1]
            uniq = key[first]
            s, d = uniq // n, uniq % n
            if return_only is not None:
                ro = np.asarray(return_only, dtype=bool)[order]
                group = np.cumsum(first) - 1
                # A group is return-only iff it holds no non-return member.
                has_plain = np.zeros(len(uniq), dtype=bool)
                np.logical_or.at(has_plain, group, ~ro)
                ro_out = ~has_plain
            else:
                ro_out = None
        else:
            s = d = np.zeros(0, dtype=np.int64)
            ro_out = np.zeros(0, dtype=bool) if return_only is not None else None
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(s, minlength=n), out=indptr[1:])
        return cls(np.asarray(ids, dtype=np.int64), indptr, d, ro_out)

    @classmethod
    def from_edges(
        cls,
        nodes: Iterable[int],
        edges: Iterable[tuple[int, int]],
    ) -> "Digraph":
        ids = np.unique(np.fromiter(nodes, dtype=np.int64))
        pairs = np.array(list(edges), dtype=np.int64).reshape(-1, 2)
        return cls.from_positions(ids, lookup(ids, pairs[:, 0]), lookup(ids, pairs[:, 1]))

    # -- size and lookup -------------------------------------------------

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def m(self) -> int:
        return len(self.indices)

    def __len__(self) -> int:
        return self.n

    def __contains__(self, node: object) -> bool:
        try:
            self.position(node)  # type: ignore[arg-type]
        except UnknownNodeError:
            return False
        return True

    def position(self, node: int) -> int:
        pos = int(np.searchsorted(self.ids, node))
        if pos >= len(self.ids) or self.ids[pos] != node:
            raise UnknownNodeError(node)
        return pos

    def positions(self, nodes: Iterable[int]) -> np.ndarray:
        return lookup(self.ids, np.fromiter(nodes, dtype=np.int64))

    def successors(self, node: int) -> list[int]:
        p = self.position(node)
        return self.ids[self.indices[self.indptr[p] : self.indptr[p + 1]]].tolist()

    def successor_positions(self, p: int) -> np.ndarray:
        return self.indices[self.indptr[p] : self.indptr[p + 1]]

    @cached_property
    def sources(self) -> np.ndarray:
        """Source position of every adjacency entry, aligned with ``indices``."""
        return np.repeat(np.arange(self.n, dtype=np.int64), np.diff(self.indptr))

    def edges(self) -> Iterator[tuple[int, int]]:
        yield from zip(self.ids[self.sources].tolist(), self.ids[self.indices].tolist())

    def out_degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    def in_degree(self) -> np.ndarray:
        return np.bincount(self.indices, minlength=self.n)

    def adjacency(self) -> sp.csr_matrix:
        """0/1 matrix with ``A[i, j] = 1`` iff there is an edge i -> j."""
        data = np.ones(self.m, dtype=np.float64)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))

    @cached_property
    def reverse(self) -> "Digraph":
        return Digraph.from_positions(self.ids, self.indices, self.sources)

    def subgraph_without(self, drop: np.ndarray) -> "Digraph":
        """Drop the adjacency entries flagged in the boolean ``drop`` mask."""
        keep = ~drop
        ro = self.return_only[keep] if self.return_only is not None else None
        return Digraph.from_positions(self.ids, self.sources[keep], self.indices[keep], ro)

    def is_acyclic(self) -> bool:
        from scipy.sparse.csgraph import connected_components

        if self.n == 0:
            return True
        if np.any(self.sources == self.indices):
            return False
        ncomp, _ = connected_components(self.adjacency(), directed=True, connection="strong")
        return ncomp == self.n

    def longest_path_length(self) -> int:
        """Edge count of the longest path; the graph must be acyclic."""
        order = topological_order(self)
        depth = np.zeros(self.n, dtype=np.int64)
        indptr, indices = self.indptr, self.indices
        for p in reversed(order):
            succ = indices[indptr[p] : indptr[p + 1]]
            if len(succ):
                depth[p] = depth[succ].max() + 1
        return int(depth.max()) if self.n else 0

    def __repr__(self) -> str:
        return f"Digraph(n={self.n}, m={self.m})"


class CycleError(ValueError):
    pass


def topological_order(g: Digraph) -> list[int]:
    """Kahn's algorithm over positions (deterministic, not lexicographic)."""
    indeg = g.in_degree().tolist()
    ready = [p for p in range(g.n - 1, -1, -1) if indeg[p] == 0]
    indptr, indices = g.indptr.tolist(), g.indices.tolist()
    order = []
    while ready:
        p = ready.pop()
        order.append(p)
        for q in indices[indptr[p] : indptr[p + 1]]:
            indeg[q] -= 1
            if indeg[q] == 0:
                ready.append(q)
    if len(order) != g.n:
        raise CycleError("graph has a cycle")
    return order
