"""CSR graphs, partitions, clusterings and the objective arithmetic."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

log = logging.getLogger(__name__)

NODE = np.int32
EDGE = np.int64
WEIGHT = np.int64

INT64_MAX = np.iinfo(np.int64).max

_EMPTY_NODE = np.empty(0, dtype=NODE)
_EMPTY_EDGE = np.empty(0, dtype=EDGE)
_EMPTY_U8 = np.empty(0, dtype=np.uint8)
_EMPTY_U32 = np.empty(0, dtype=np.uint32)


class StructuralError(ValueError):
    """Inputs whose shapes or cross-references do not line up."""


class InfeasibleError(ValueError):
    """No partition can satisfy the balance constraint."""


def checked_sum(values: np.ndarray) -> int:
    """Exact sum of an integer array; raises OverflowError past int64."""
    if values.size == 0:
        return 0
    hi = int(values.max())
    lo = int(values.min())
    if max(abs(hi), abs(lo)) <= INT64_MAX // values.size:
        return int(values.sum(dtype=np.int64))
    total = sum(int(v) for v in values)
    if total > INT64_MAX or total < -INT64_MAX:
        raise OverflowError("weight sum exceeds the 64-bit range")
    return total


@dataclass
class Graph:
    """Undirected weighted graph in CSR form; every edge is stored as two arcs."""

    offsets: np.ndarray
    targets: np.ndarray
    edge_weights: np.ndarray
    vertex_weights: np.ndarray
    _total_weight: int | None = field(default=None, repr=False)

    is_compressed = False

    @property
    def n(self) -> int:
        return len(self.offsets) - 1

    @property
    def m(self) -> int:
        return len(self.targets) // 2

    def degree(self, u: int) -> int:
        return int(self.offsets[u + 1] - self.offsets[u])

    def degrees(self) -> np.ndarray:
        return np.diff(self.offsets)

    def max_degree(self) -> int:
        return int(self.degrees().max()) if self.n else 0

    def neighbors(self, u: int) -> tuple[np.ndarray, np.ndarray]:
        a, b = self.offsets[u], self.offsets[u + 1]
        return self.targets[a:b], self.edge_weights[a:b]

    @property
    def total_vertex_weight(self) -> int:
        if self._total_weight is None:
            self._total_weight = checked_sum(self.vertex_weights)
        return self._total_weight

    @property
    def max_vertex_weight(self) -> int:
        return int(self.vertex_weights.max()) if self.n else 0

    @property
    def has_unit_edge_weights(self) -> bool:
        return bool(np.all(self.edge_weights == 1))

    def nbytes(self) -> int:
        return (self.offsets.nbytes + self.targets.nbytes
                + self.edge_weights.nbytes + self.vertex_weights.nbytes)

    def kernel_view(self) -> tuple:
        """Flat tuple consumed by the numba kernels (see ``_adjacency``)."""
        return (0, self.offsets, self.targets, self.edge_weights,
                _EMPTY_U8, _EMPTY_U32, 2 * self.m, 0, 0, 1, self.n)

    def to_graph(self) -> "Graph":
        return self

    def arc_sources(self) -> np.ndarray:
        return np.repeat(np.arange(self.n, dtype=NODE), self.degrees())

    @classmethod
    def from_edges(cls, n: int, edges, weights=None, vertex_weights=None) -> "Graph":
        """Build from an undirected edge list.

        Self-loops are dropped; parallel edges are merged by summing weights.
        Adjacency lists come out sorted by target.
        """
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if weights is None:
            weights = np.ones(len(edges), dtype=WEIGHT)
        weights = np.asarray(weights, dtype=WEIGHT)
        if len(weights) != len(edges):
            raise StructuralError("one weight per edge required")
        if len(edges) and (edges.min() < 0 or edges.max() >= n):
            raise StructuralError("edge endpoint out of range")
        if np.any(weights <= 0):
            raise StructuralError("edge weights must be positive")
        loops = edges[:, 0] == edges[:, 1]
        if loops.any():
            log.debug("dropping %d self-loops", int(loops.sum()))
            edges, weights = edges[~loops], weights[~loops]
        src = np.concatenate([edges[:, 0], edges[:, 1]])
        dst = np.concatenate([edges[:, 1], edges[:, 0]])
        wgt = np.concatenate([weights, weights])
        return cls._from_arcs(n, src, dst, wgt, vertex_weights)

    @classmethod
    def _from_arcs(cls, n, src, dst, wgt, vertex_weights=None) -> "Graph":
        order = np.lexsort((dst, src))
        src, dst, wgt = src[order], dst[order], wgt[order]
        if len(src):
            first = np.ones(len(src), dtype=bool)
            first[1:] = (src[1:] != src[:-1]) | (dst[1:] != dst[:-1])
            if not first.all():
                idx = np.flatnonzero(first)
                wgt = np.add.reduceat(wgt, idx)
                src, dst = src[idx], dst[idx]
        offsets = np.zeros(n + 1, dtype=EDGE)
        np.cumsum(np.bincount(src, minlength=n), out=offsets[1:])
        if vertex_weights is None:
            vertex_weights = np.ones(n, dtype=WEIGHT)
        vertex_weights = np.asarray(vertex_weights, dtype=WEIGHT)
        if len(vertex_weights) != n:
            raise StructuralError("one vertex weight per vertex required")
        return cls(offsets, dst.astype(NODE), wgt.astype(WEIGHT), vertex_weights)

    @classmethod
    def from_adjacency(cls, adjacency, vertex_weights=None) -> "Graph":
        """Build from ``adjacency[u] = [(v, w), ...]`` or ``[v, ...]`` (symmetric input)."""
        n = len(adjacency)
        src, dst, wgt = [], [], []
        for u, nbrs in enumerate(adjacency):
            for item in nbrs:
                v, w = item if isinstance(item, tuple) else (item, 1)
                if v != u:
                    src.append(u)
                    dst.append(v)
                    wgt.append(w)
        return cls._from_arcs(n, np.array(src, dtype=np.int64), np.array(dst, dtype=np.int64),
                              np.array(wgt, dtype=WEIGHT), vertex_weights)


def empty_graph(n: int = 0) -> Graph:
    return Graph(np.zeros(n + 1, dtype=EDGE), _EMPTY_NODE.copy(), np.empty(0, dtype=WEIGHT),
                 np.ones(n, dtype=WEIGHT))


# --- partitions and clusterings -------------------------------------------------


def max_block_weight(total_weight: int, k: int, epsilon, max_vertex_weight: int = 0) -> int:
    """Balance budget ``ceil((1 + epsilon) * total_weight / k)``, exact rationals.

    ``max_vertex_weight`` raises the budget so that a heavy (contracted)
    vertex never makes the instance infeasible by construction.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    eps = Fraction(repr(epsilon)) if isinstance(epsilon, float) else Fraction(epsilon)
    if eps < 0:
        raise ValueError("epsilon must be non-negative")
    budget = math.ceil((1 + eps) * total_weight / k)
    return max(budget, int(max_vertex_weight))


@dataclass
class Partition:
    k: int
    epsilon: float
    assignment: np.ndarray
    block_weights: np.ndarray
    max_block_weight: int

    @classmethod
    def build(cls, g, assignment, k: int, epsilon: float = 0.03,
              budget: int | None = None) -> "Partition":
        assignment = np.asarray(assignment, dtype=NODE)
        if len(assignment) != g.n:
            raise StructuralError(f"partition has {len(assignment)} entries, graph has {g.n} vertices")
        if len(assignment) and (assignment.min() < 0 or assignment.max() >= k):
            raise StructuralError("block id out of range")
        weights = block_weights_of(g.vertex_weights, assignment, k)
        if budget is None:
            budget = max_block_weight(max(g.total_vertex_weight, 1), k, epsilon, g.max_vertex_weight)
        return cls(k, epsilon, assignment, weights, int(budget))

    @property
    def is_feasible(self) -> bool:
        return is_balanced(self)

    def copy(self) -> "Partition":
        return Partition(self.k, self.epsilon, self.assignment.copy(),
                         self.block_weights.copy(), self.max_block_weight)


def block_weights_of(vertex_weights: np.ndarray, assignment: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros(k, dtype=WEIGHT)
    np.add.at(out, assignment, vertex_weights)
    return out


def is_balanced(p: Partition) -> bool:
    return bool(np.all(p.block_weights <= p.max_block_weight))


def imbalance(p: Partition) -> float:
    total = int(p.block_weights.sum())
    if total == 0:
        return 0.0
    return float(p.block_weights.max()) * p.k / total - 1.0


@dataclass
class Clustering:
    assignment: np.ndarray
    cluster_weights: np.ndarray
    max_cluster_weight: int

    @classmethod
    def singletons(cls, g, max_cluster_weight: int) -> "Clustering":
        return cls(np.arange(g.n, dtype=NODE), g.vertex_weights.astype(WEIGHT).copy(),
                   int(max_cluster_weight))

    @property
    def n_clusters(self) -> int:
        return len(np.unique(self.assignment))

    def recompute_weights(self, g) -> np.ndarray:
        return block_weights_of(g.vertex_weights, self.assignment, len(self.assignment))


# --- objective -----------------------------------------------------------------


def edge_cut(g, p) -> int:
    """Total weight of undirected edges whose endpoints lie in different blocks."""
    assignment = p.assignment if isinstance(p, Partition) else np.asarray(p)
    if len(assignment) != g.n:
        raise StructuralError(f"partition has {len(assignment)} entries, graph has {g.n} vertices")
    if g.is_compressed:
        from ._adjacency import cut_kernel

        return int(cut_kernel(g.kernel_view(), assignment.astype(NODE, copy=False))) // 2
    if g.m == 0:
        return 0
    cross = assignment[g.arc_sources()] != assignment[g.targets]
    return checked_sum(g.edge_weights[cross]) // 2


# --- validation ----------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    kind: str
    location: tuple
    detail: str = ""

    def __str__(self) -> str:
        return f"{self.kind} at {self.location}" + (f": {self.detail}" if self.detail else "")


def validate_graph(g: Graph) -> list[Violation]:
    """Report every CSR invariant violation; an empty list means the graph is valid."""
    out: list[Violation] = []
    offsets, targets, weights = g.offsets, g.targets, g.edge_weights
    n = len(offsets) - 1
    if n < 0:
        return [Violation("missing offsets", ())]
    if offsets[0] != 0:
        out.append(Violation("nonzero first offset", (0,)))
    bad = np.flatnonzero(np.diff(offsets) < 0)
    for i in bad:
        out.append(Violation("non-monotone offset", (int(i) + 1,)))
    if offsets[-1] != len(targets):
        out.append(Violation("offset/arc count mismatch", (n,),
                             f"{int(offsets[-1])} != {len(targets)}"))
    if len(weights) != len(targets):
        out.append(Violation("edge weight count mismatch", (), f"{len(weights)} != {len(targets)}"))
    if len(g.vertex_weights) != n:
        out.append(Violation("vertex weight count mismatch", ()))
    if out:
        return out  # remaining checks need a consistent layout
    for u in np.flatnonzero(g.vertex_weights <= 0):
        out.append(Violation("non-positive vertex weight", (int(u),)))
    if len(targets) and (targets.min() < 0 or targets.max() >= n):
        for i in np.flatnonzero((targets < 0) | (targets >= n)):
            out.append(Violation("target out of range", (int(i),)))
        return out
    src = np.repeat(np.arange(n, dtype=np.int64), np.diff(offsets))
    dst = targets.astype(np.int64)
    for i in np.flatnonzero(src == dst):
        out.append(Violation("self-loop", (int(src[i]),)))
    for i in np.flatnonzero(weights <= 0):
        out.append(Violation("non-positive edge weight", (int(src[i]), int(dst[i]))))
    # symmetry: the multiset of (u, v, w) must equal that of (v, u, w)
    fwd = np.lexsort((weights, dst, src))
    rev = np.lexsort((weights, src, dst))
    same = ((src[fwd] == dst[rev]) & (dst[fwd] == src[rev]) & (weights[fwd] == weights[rev]))
    if not same.all():
        fwd_keys = set(zip(src.tolist(), dst.tolist(), weights.tolist()))
        for u, v, w in sorted(fwd_keys):
            if (v, u, w) not in fwd_keys:
                out.append(Violation("asymmetry", (u, v), f"no reverse arc with weight {w}"))
    return out
