"""Operation graph, incident-spread graph and the per-node status partition."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

UNREACHABLE = math.inf

N_CATEGORIES = 3


class Category(enum.IntEnum):
    GENERAL = 0
    FLAMMABLE = 1
    SUPPORT = 2


class Status(enum.IntEnum):
    NORMAL = 0
    INCIDENT = 1
    SCRAPPED = 2


NORMAL, INCIDENT, SCRAPPED = Status


class MoveError(ValueError):
    """Raised when an asset move violates its preconditions."""


@dataclass(frozen=True)
class Node:
    id: int
    assets: int
    category: Category = Category.GENERAL
    position: tuple[int, int] = (0, 0)


@dataclass(frozen=True)
class OperationGraph:
    """Undirected physical layout. Edge distances are in grid cells."""

    nodes: tuple[Node, ...]
    edges: tuple[tuple[int, int, float], ...]
    grid_dims: tuple[int, int]

    def __post_init__(self):
        n = len(self.nodes)
        for k, node in enumerate(self.nodes):
            if node.id != k:
                raise ValueError(f"nodes[{k}].id must equal its index, got {node.id}")
            x, y = node.position
            if not (0 <= x < self.grid_dims[0] and 0 <= y < self.grid_dims[1]):
                raise ValueError(f"nodes[{k}].position {node.position} outside grid {self.grid_dims}")
        for a, b, d in self.edges:
            if not (0 <= a < n and 0 <= b < n):
                raise ValueError(f"edge ({a}, {b}) references a missing node")
            if a == b or not d > 0:
                raise ValueError(f"edge ({a}, {b}) needs distinct endpoints and positive distance")

    @property
    def n(self) -> int:
        return len(self.nodes)

    @cached_property
    def _shortest(self) -> tuple[np.ndarray, np.ndarray]:
        n = self.n
        if not self.edges:
            dist = np.full((n, n), UNREACHABLE)
            np.fill_diagonal(dist, 0.0)
            return dist, np.full((n, n), -9999, dtype=np.int64)
        rows, cols, vals = [], [], []
        for a, b, d in self.edges:
            rows += [a, b]
            cols += [b, a]
            vals += [d, d]
        # duplicate edges: keep the shortest
        best: dict[tuple[int, int], float] = {}
        for r, c, v in zip(rows, cols, vals):
            best[(r, c)] = min(v, best.get((r, c), math.inf))
        keys = sorted(best)
        mat = csr_matrix(
            ([best[k] for k in keys], ([k[0] for k in keys], [k[1] for k in keys])),
            shape=(n, n),
        )
        dist, pred = dijkstra(mat, directed=False, return_predecessors=True)
        return dist, pred.astype(np.int64)

    @property
    def distances(self) -> np.ndarray:
        """All-pairs shortest distances; ``inf`` marks unreachable pairs."""
        return self._shortest[0]

    def next_hop(self, a: int, b: int) -> int | None:
        """First node after ``a`` on a shortest path to ``b`` (None if a == b or unreachable)."""
        if a == b or not math.isfinite(self.distances[a, b]):
            return None
        # predecessor of a on the path from b is the step a takes toward b
        return int(self._shortest[1][b, a])

    def path(self, a: int, b: int) -> list[int]:
        """Nodes visited after leaving ``a`` up to and including ``b``."""
        out: list[int] = []
        cur = a
        while cur != b:
            nxt = self.next_hop(cur, b)
            if nxt is None:
                return []
            out.append(nxt)
            cur = nxt
        return out

    @cached_property
    def adjacency_length(self) -> dict[tuple[int, int], float]:
        out: dict[tuple[int, int], float] = {}
        for a, b, d in self.edges:
            out[(a, b)] = min(d, out.get((a, b), math.inf))
            out[(b, a)] = min(d, out.get((b, a), math.inf))
        return out


def shortest_distance(graph: OperationGraph, a: int, b: int) -> float:
    if not (0 <= a < graph.n and 0 <= b < graph.n):
        raise IndexError(f"node out of range: {a}, {b}")
    return float(graph.distances[a, b])


@dataclass(frozen=True)
class SpreadGraph:
    """Directed hazard-propagation edges ``(src, dst, base_rate)``."""

    n: int
    edges: tuple[tuple[int, int, float], ...]

    def __post_init__(self):
        for a, b, rate in self.edges:
            if not (0 <= a < self.n and 0 <= b < self.n) or a == b:
                raise ValueError(f"spread edge ({a}, {b}) invalid for {self.n} nodes")
            if not 0.0 <= rate <= 1.0:
                raise ValueError(f"spread edge ({a}, {b}) base_rate {rate} outside [0, 1]")

    @cached_property
    def rate_matrix(self) -> np.ndarray:
        mat = np.zeros((self.n, self.n))
        for a, b, rate in self.edges:
            mat[a, b] = rate
        return mat


def generate_spread_edges(
    positions: Sequence[tuple[int, int]],
    rng: np.random.Generator,
    k: int = 4,
    p_extra: float = 0.05,
    near_rate: tuple[float, float] = (0.05, 0.15),
    far_rate: tuple[float, float] = (0.01, 0.04),
) -> tuple[tuple[int, int, float], ...]:
    """k-nearest-neighbour spread edges plus random long-range "pipeline" edges.

    Neighbours are ranked by Euclidean distance between grid positions, ties by
    node id. Rates are drawn uniformly from ``near_rate`` / ``far_rate``.
    """
    pos = np.asarray(positions, dtype=float).reshape(-1, 2)
    n = len(pos)
    edges: dict[tuple[int, int], float] = {}
    for i in range(n):
        d = np.hypot(*(pos - pos[i]).T)
        order = sorted((j for j in range(n) if j != i), key=lambda j: (d[j], j))
        for j in order[:k]:
            edges[(i, j)] = float(rng.uniform(*near_rate))
    extra = rng.random((n, n)) < p_extra
    far = rng.uniform(*far_rate, size=(n, n))
    for i in range(n):
        for j in range(n):
            if i != j and extra[i, j] and (i, j) not in edges:
                edges[(i, j)] = float(far[i, j])
    return tuple((i, j, round(r, 6)) for (i, j), r in sorted(edges.items()))


@dataclass
class NodeState:
    """Mutable per-node assets and status."""

    assets: np.ndarray
    status: np.ndarray

    @classmethod
    def from_graph(cls, graph: OperationGraph) -> "NodeState":
        return cls(
            assets=np.array([nd.assets for nd in graph.nodes], dtype=np.int64),
            status=np.zeros(graph.n, dtype=np.int8),
        )

    def copy(self) -> "NodeState":
        return NodeState(self.assets.copy(), self.status.copy())

    def members(self, status: Status) -> set[int]:
        return set(np.flatnonzero(self.status == status).tolist())

    @property
    def normal(self) -> set[int]:
        return self.members(NORMAL)

    @property
    def incident(self) -> set[int]:
        return self.members(INCIDENT)

    @property
    def scrapped(self) -> set[int]:
        return self.members(SCRAPPED)

    def scrap(self, nodes: Iterable[int]) -> None:
        for i in nodes:
            self.status[i] = SCRAPPED
            self.assets[i] = 0


def move_assets(nodes: NodeState, src: int, dst: int) -> NodeState:
    """Carry every asset at ``src`` to ``dst`` (in place)."""
    if src == dst:
        raise MoveError("source and destination are the same node")
    if nodes.assets[src] <= 0:
        raise MoveError(f"no assets at node {src}")
    if nodes.status[dst] == SCRAPPED:
        raise MoveError(f"destination {dst} is scrapped")
    nodes.assets[dst] += nodes.assets[src]
    nodes.assets[src] = 0
    return nodes


@dataclass(frozen=True)
class Graphs:
    operation: OperationGraph
    spread: SpreadGraph
    categories: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.spread.n != self.operation.n:
            raise ValueError("spread graph and operation graph disagree on node count")
        object.__setattr__(
            self, "categories", np.array([nd.category for nd in self.operation.nodes], dtype=np.int64)
        )
