"""Inter-procedural control-flow graphs and their line-oriented text format.

File format (UTF-8, ``#`` starts a comment, blank lines ignored)::

    entry <id>
    N <id>
    E <src> <dst> <intra|call|ret>

Only graph shape matters; basic-block contents are not modelled.
"""
from __future__ import annotations

import enum
from collections.abc import Iterable
from functools import cached_property

import numpy as np

from .graph import Digraph, UnknownNodeError, lookup

MAX_NODE_ID = 2**63 - 1


class EdgeKind(enum.IntEnum):
    INTRA = 0
    CALL = 1
    RETURN = 2

    @property
    def token(self) -> str:
        return _KIND_TOKENS[self]

    @classmethod
    def from_token(cls, token: str) -> "EdgeKind":
        try:
            return _TOKEN_KINDS[token]
        except KeyError:
            raise ValueError(f"unknown edge kind {token!r}") from None


_KIND_TOKENS = {EdgeKind.INTRA: "intra", EdgeKind.CALL: "call", EdgeKind.RETURN: "ret"}
_TOKEN_KINDS = {v: k for k, v in _KIND_TOKENS.items()}


class CfgError(ValueError):
    """Invalid CFG content. ``line`` is 1-based when the error has a source line."""

    def __init__(self, message: str, line: int | None = None) -> None:
        self.message = message
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class Cfg:
    """Immutable inter-procedural CFG with typed edges and one entry node."""

    def __init__(self, graph: Digraph, src: np.ndarray, dst: np.ndarray, kind: np.ndarray, entry: int) -> None:
        self.graph = graph
        self._src = src
        self._dst = dst
        self._kind = kind
        self.entry = entry

    @classmethod
    def build(
        cls,
        nodes: Iterable[int],
        edges: Iterable[tuple[int, int, EdgeKind]],
        entry: int,
    ) -> "Cfg":
        ids = np.unique(np.fromiter(nodes, dtype=np.int64))
        triples = np.array([(s, d, int(k)) for s, d, k in edges], dtype=np.int64).reshape(-1, 3)
        return cls.from_arrays(ids, triples[:, 0], triples[:, 1], triples[:, 2], entry)

    @classmethod
    def from_arrays(
        cls,
        ids: np.ndarray,
        src_ids: np.ndarray,
        dst_ids: np.ndarray,
        kinds: np.ndarray,
        entry: int,
    ) -> "Cfg":
        """Validate and index; ``ids`` must be sorted and unique."""
        ids = np.asarray(ids, dtype=np.int64)
        if len(ids) and (ids[0] < 0 or np.any(ids[1:] <= ids[:-1])):
            raise CfgError("node ids must be sorted, unique and non-negative")
        try:
            src = lookup(ids, src_ids)
            dst = lookup(ids, dst_ids)
        except UnknownNodeError as exc:
            raise CfgError(f"dangling edge endpoint {exc.args[0]}") from None
        if np.any(src == dst):
            raise CfgError(f"self-edge on node {int(ids[src[src == dst][0]])}")
        kinds = np.asarray(kinds, dtype=np.int8)
        pos = int(np.searchsorted(ids, entry))
        if pos >= len(ids) or ids[pos] != entry:
            raise CfgError(f"entry node {entry} is not declared")
        # Collapse repeated (src, dst, kind) triples.
        if len(src):
            key = (src * len(ids) + dst) * 3 + kinds
            _, first = np.unique(key, return_index=True)
            first.sort()
            src, dst, kinds = src[first], dst[first], kinds[first]
        graph = Digraph.from_positions(ids, src, dst, kinds == EdgeKind.RETURN)
        return cls(graph, src, dst, kinds, int(entry))

    @cached_property
    def nodes(self) -> frozenset[int]:
        return frozenset(self.graph.ids.tolist())

    @cached_property
    def edges(self) -> frozenset[tuple[int, int, EdgeKind]]:
        ids = self.graph.ids
        return frozenset(
            (s, d, EdgeKind(k))
            for s, d, k in zip(ids[self._src].tolist(), ids[self._dst].tolist(), self._kind.tolist())
        )

    @cached_property
    def successor_map(self) -> dict[int, tuple[int, ...]]:
        """Plain-dict adjacency for hot Python loops."""
        g = self.graph
        ids = g.ids.tolist()
        targets = g.ids[g.indices].tolist()
        bounds = g.indptr.tolist()
        return {ids[p]: tuple(targets[bounds[p] : bounds[p + 1]]) for p in range(g.n)}

    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(src positions, dst positions, kind codes), one row per typed edge."""
        return self._src, self._dst, self._kind

    def out_neighbors(self, node: int) -> list[int]:
        try:
            return self.graph.successors(node)
        except UnknownNodeError:
            raise UnknownNodeError(f"unknown node {node}") from None

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Cfg):
            return NotImplemented
        return (
            self.entry == other.entry
            and np.array_equal(self.graph.ids, other.graph.ids)
            and self.edges == other.edges
        )

    __hash__ = None  # type: ignore[assignment]

    def __repr__(self) -> str:
        return f"Cfg(nodes={self.graph.n}, edges={len(self._src)}, entry={self.entry})"


def out_neighbors(cfg: Cfg, node: int) -> list[int]:
    """Successors of ``node`` in ascending id order."""
    return cfg.out_neighbors(node)


def _parse_id(token: str, lineno: int) -> int:
    if not token.isdigit() or not token.isascii():
        raise CfgError(f"invalid node id {token!r}", lineno)
    value = int(token)
    if value > MAX_NODE_ID:
        raise CfgError(f"node id {token} out of range", lineno)
    return value


def parse_cfg(text: bytes | str) -> Cfg:
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CfgError(f"input is not UTF-8: {exc}") from None
    entry: int | None = None
    declared: dict[int, int] = {}
    src: list[int] = []
    dst: list[int] = []
    kinds: list[int] = []
    edge_lines: list[int] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        head = parts[0]
        if head == "N":
            if len(parts) != 2:
                raise CfgError("expected 'N <id>'", lineno)
            node = _parse_id(parts[1], lineno)
            if node in declared:
                raise CfgError(f"duplicate node {node} (first declared on line {declared[node]})", lineno)
            declared[node] = lineno
        elif head == "E":
            if len(parts) != 4:
                raise CfgError("expected 'E <src> <dst> <kind>'", lineno)
            s, d = _parse_id(parts[1], lineno), _parse_id(parts[2], lineno)
            if s == d:
                raise CfgError(f"self-edge on node {s}", lineno)
            try:
                k = EdgeKind.from_token(parts[3])
            except ValueError as exc:
                raise CfgError(str(exc), lineno) from None
            src.append(s)
            dst.append(d)
            kinds.append(int(k))
            edge_lines.append(lineno)
        elif head == "entry":
            if len(parts) != 2:
                raise CfgError("expected 'entry <id>'", lineno)
            if entry is not None:
                raise CfgError("entry declared more than once", lineno)
            entry = _parse_id(parts[1], lineno)
        else:
            raise CfgError(f"unknown directive {head!r}", lineno)
    if entry is None:
        raise CfgError("missing entry directive")
    for s, d, lineno in zip(src, dst, edge_lines):
        for endpoint in (s, d):
            if endpoint not in declared:
                raise CfgError(f"dangling edge endpoint {endpoint}", lineno)
    if entry not in declared:
        raise CfgError(f"entry node {entry} is not declared")
    ids = np.array(sorted(declared), dtype=np.int64)
    return Cfg.from_arrays(ids, np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64), np.array(kinds), entry)


def format_cfg(cfg: Cfg) -> str:
    lines = [f"entry {cfg.entry}"]
    lines.extend(f"N {node}" for node in cfg.graph.ids.tolist())
    lines.extend(
        f"E {s} {d} {k.token}" for s, d, k in sorted(cfg.edges)
    )
    return "\n".join(lines) + "\n"
