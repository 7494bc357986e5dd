"""Initial partitioning of the coarsest graph by recursive bisection.

Each bisection is the best of a small portfolio of randomized greedy graph
growing runs, each polished by 2-way FM. Everything here is sequential;
the coarsest graph is small.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .graph import NODE, WEIGHT, Graph, InfeasibleError, Partition, max_block_weight

PORTFOLIO_SIZE = 8
FM_PASSES = 8
FM_STALL = 100  # non-improving moves before a pass gives up


@dataclass
class Bisection:
    side: np.ndarray  # int8, 0 or 1
    weights: tuple[int, int]
    cut: int

    @classmethod
    def from_sides(cls, g: Graph, side) -> "Bisection":
        side = np.asarray(side, dtype=np.int8)
        w1 = int(g.vertex_weights[side == 1].sum())
        return cls(side, (g.total_vertex_weight - w1, w1), bisection_cut(g, side))

    def fits(self, budgets) -> bool:
        return self.weights[0] <= budgets[0] and self.weights[1] <= budgets[1]


def bisection_cut(g: Graph, side) -> int:
    if g.m == 0:
        return 0
    src = g.arc_sources()
    return int(g.edge_weights[side[src] != side[g.targets]].sum()) // 2


def _adjacency_lists(g: Graph):
    t = g.targets.tolist()
    w = g.edge_weights.tolist()
    off = g.offsets.tolist()
    return [list(zip(t[off[u]:off[u + 1]], w[off[u]:off[u + 1]])) for u in range(g.n)]


# --- greedy graph growing ---------------------------------------------------------


def greedy_graph_growing(g: Graph, budget0: int, budget1: int, seed: int = 0,
                         target0: int | None = None, adj=None) -> Bisection:
    """Grow side 0 from a random vertex, always absorbing the vertex with the
    largest (internal - external) attachment, until side 0 reaches
    ``target0`` (half the weight by default) within its budget."""
    W = g.total_vertex_weight
    if budget0 < 0 or budget1 < 0 or budget0 + budget1 < W:
        raise InfeasibleError(f"budgets {budget0}+{budget1} cannot hold weight {W}")
    n = g.n
    side = np.ones(n, dtype=np.int8)
    if n == 0:
        return Bisection(side, (0, 0), 0)
    if target0 is None:
        target0 = W // 2
    target0 = max(min(target0, budget0), W - budget1)
    adj = adj if adj is not None else _adjacency_lists(g)
    vw = g.vertex_weights.tolist()
    rng = np.random.default_rng(seed)
    tie = rng.random(n).tolist()
    # gain of moving v into side 0 = w(v, side0) - w(v, side1)
    gain = [-sum(w for _, w in adj[v]) for v in range(n)]
    start = int(rng.integers(n))
    heap = [(-gain[v], tie[v], v) for v in range(n) if v != start]
    heap.append((-math.inf, -1.0, start))
    heapq.heapify(heap)
    w0 = 0
    while heap and w0 < target0:
        negg, _, v = heapq.heappop(heap)
        if side[v] == 0 or (negg != -math.inf and -negg != gain[v]):
            continue
        if w0 + vw[v] > budget0:
            continue
        side[v] = 0
        w0 += vw[v]
        for x, w in adj[v]:
            if side[x] == 1:
                gain[x] += 2 * w
                heapq.heappush(heap, (-gain[x], tie[x], x))
    # Side 1 may still be over budget if heavy vertices were skipped.
    if W - w0 > budget1:
        for v in sorted(range(n), key=lambda v: vw[v]):
            if side[v] == 1 and w0 + vw[v] <= budget0:
                side[v] = 0
                w0 += vw[v]
                if W - w0 <= budget1:
                    break
    return Bisection.from_sides(g, side)


# --- 2-way FM -----------------------------------------------------------------------


class GainBuckets:
    """Max-priority buckets keyed by integer gain.

    Buckets are insertion-ordered dicts; a lazy heap over the bucket keys
    finds the current maximum.
    """

    def __init__(self):
        self.buckets: dict[int, dict[int, None]] = {}
        self.gain_of: dict[int, int] = {}
        self._keys: list[int] = []

    def __len__(self) -> int:
        return len(self.gain_of)

    def __contains__(self, v: int) -> bool:
        return v in self.gain_of

    def insert(self, v: int, gain: int) -> None:
        bucket = self.buckets.get(gain)
        if bucket is None:
            bucket = self.buckets[gain] = {}
            heapq.heappush(self._keys, -gain)
        bucket[v] = None
        self.gain_of[v] = gain

    def remove(self, v: int) -> None:
        gain = self.gain_of.pop(v)
        bucket = self.buckets[gain]
        del bucket[v]
        if not bucket:
            del self.buckets[gain]

    def update(self, v: int, gain: int) -> None:
        self.remove(v)
        self.insert(v, gain)

    def peek(self) -> tuple[int, int] | None:
        while self._keys:
            gain = -self._keys[0]
            bucket = self.buckets.get(gain)
            if bucket:
                return next(iter(bucket)), gain
            heapq.heappop(self._keys)
        return None


def fm2way(g: Graph, b: Bisection, budgets, max_passes: int = FM_PASSES,
           adj=None) -> Bisection:
    """Classic 2-way FM with rollback to the best feasible prefix.

    A pass may pass through slightly infeasible states (a side may exceed
    its budget by at most the heaviest vertex); only feasible states are
    candidates for the committed prefix, and feasibility is preferred over
    cut when the input itself is infeasible.
    """
    n = g.n
    if n == 0:
        return b
    adj = adj if adj is not None else _adjacency_lists(g)
    vw = g.vertex_weights.tolist()
    slack = int(g.max_vertex_weight)
    side = b.side.copy()
    weights = list(b.weights)
    cut = b.cut
    budgets = (int(budgets[0]), int(budgets[1]))

    def score():
        over = max(0, weights[0] - budgets[0]) + max(0, weights[1] - budgets[1])
        return (over, cut)

    for _ in range(max_passes):
        start_score = score()
        gain = [0] * n
        for v in range(n):
            s = side[v]
            gain[v] = sum(w if side[x] != s else -w for x, w in adj[v])
        queues = (GainBuckets(), GainBuckets())
        for v in range(n):
            queues[side[v]].insert(v, gain[v])
        moved: list[int] = []
        best_score, best_len = start_score, 0
        stall = 0
        while stall < FM_STALL:
            choice = None
            overloaded = [s for s in (0, 1) if weights[s] > budgets[s]]
            for s in (0, 1):
                if overloaded and s not in overloaded:
                    continue
                top = queues[s].peek()
                if top is None:
                    continue
                v, gv_ = top
                if weights[1 - s] + vw[v] > budgets[1 - s] + slack:
                    continue
                if choice is None or gv_ > choice[1]:
                    choice = (v, gv_, s)
            if choice is None:
                break
            v, gv_, s = choice
            queues[s].remove(v)
            side[v] = 1 - s
            weights[s] -= vw[v]
            weights[1 - s] += vw[v]
            cut -= gv_
            moved.append(v)
            for x, w in adj[v]:
                if x in queues[side[x]]:
                    delta = 2 * w if side[x] == s else -2 * w
                    queues[side[x]].update(x, queues[side[x]].gain_of[x] + delta)
            sc = score()
            if sc < best_score:
                best_score, best_len = sc, len(moved)
                stall = 0
            else:
                stall += 1
        for v in reversed(moved[best_len:]):
            s = side[v]
            side[v] = 1 - s
            weights[s] -= vw[v]
            weights[1 - s] += vw[v]
        cut = best_score[1]
        if best_score >= start_score:
            break
    out = Bisection(side, (weights[0], weights[1]), cut)
    if b.fits(budgets):
        assert out.cut <= b.cut and out.fits(budgets)
    return out


# --- recursive bisection --------------------------------------------------------------


def _subgraph(g: Graph, vertices: np.ndarray) -> Graph:
    local = np.full(g.n, -1, dtype=np.int64)
    local[vertices] = np.arange(len(vertices))
    deg = g.offsets[vertices + 1] - g.offsets[vertices]
    src = np.repeat(local[vertices], deg)
    idx = np.repeat(g.offsets[vertices] - np.cumsum(deg) + deg, deg) + np.arange(deg.sum())
    dst = local[g.targets[idx]]
    keep = dst >= 0
    order = np.lexsort((dst[keep], src[keep]))
    s, d, w = src[keep][order], dst[keep][order], g.edge_weights[idx][keep][order]
    offsets = np.zeros(len(vertices) + 1, dtype=np.int64)
    np.cumsum(np.bincount(s, minlength=len(vertices)), out=offsets[1:])
    return Graph(offsets, d.astype(NODE), w.astype(WEIGHT),
                 g.vertex_weights[vertices].astype(WEIGHT))


def best_bisection(g: Graph, budgets, target0: int, portfolio_size: int, seed: int) -> Bisection:
    """Best (feasible first, then smallest cut) of the portfolio runs."""
    adj = _adjacency_lists(g)
    best = None
    for run in range(portfolio_size):
        b = greedy_graph_growing(g, budgets[0], budgets[1], seed=seed * 7919 + run,
                                 target0=target0, adj=adj)
        b = fm2way(g, b, budgets, adj=adj)
        key = (not b.fits(budgets), b.cut)
        if best is None or key < best[0]:
            best = (key, b)
    return best[1]


def initial_partition(g, k: int, epsilon: float = 0.03, portfolio_size: int = PORTFOLIO_SIZE,
                      seed: int = 0, budget: int | None = None) -> Partition:
    """Recursive bisection into ``k`` blocks balanced for ``budget``
    (default ``max_block_weight(W, k, epsilon)``)."""
    g = g.to_graph()
    if k < 1:
        raise ValueError("k must be at least 1")
    W = g.total_vertex_weight
    if budget is None:
        budget = max_block_weight(max(W, 1), k, epsilon)
    if g.n and g.max_vertex_weight > budget:
        raise InfeasibleError(
            f"vertex weight {g.max_vertex_weight} exceeds block budget {budget}")
    assignment = np.zeros(g.n, dtype=NODE)
    eps = Fraction(repr(epsilon)) if isinstance(epsilon, float) else Fraction(epsilon)
    stack = [(np.arange(g.n), k, 0, 0)]
    node = 0
    while stack:
        vertices, kk, first, depth = stack.pop()
        if kk == 1 or len(vertices) == 0:
            assignment[vertices] = first
            continue
        sub = _subgraph(g, vertices)
        Wp = sub.total_vertex_weight
        k1, k2 = (kk + 1) // 2, kk // 2
        eps_d = eps + Fraction(depth, 100)
        budgets = tuple(min(math.ceil((1 + eps_d) * Wp * ki / kk), ki * budget)
                        for ki in (k1, k2))
        if budgets[0] + budgets[1] < Wp:
            raise InfeasibleError("bisection budgets cannot hold the subgraph weight")
        target0 = math.ceil(Fraction(Wp * k1, kk))
        b = best_bisection(sub, budgets, target0, portfolio_size, seed * 1000003 + node)
        node += 1
        stack.append((vertices[b.side == 1], k2, first + k1, depth + 1))
        stack.append((vertices[b.side == 0], k1, first, depth + 1))
    p = Partition.build(g, assignment, k, epsilon, budget=budget)
    if not p.is_feasible:
        rebalance(g, p)
    return p


def rebalance(g: Graph, p: Partition) -> None:
    """Greedy safety net: move vertices out of overloaded blocks into the
    admissible block they are most connected to, lightest loss first."""
    adj = _adjacency_lists(g)
    vw = g.vertex_weights.tolist()
    a = p.assignment
    bw = p.block_weights
    L = p.max_block_weight
    for blk in np.flatnonzero(bw > L).tolist():
        members = np.flatnonzero(a == blk).tolist()
        scored = []
        for v in members:
            conn: dict[int, int] = {}
            for x, w in adj[v]:
                conn[int(a[x])] = conn.get(int(a[x]), 0) + w
            scored.append((conn.get(blk, 0), v, conn))
        scored.sort(key=lambda s: s[0])
        for _, v, conn in scored:
            if bw[blk] <= L:
                break
            targets = [t for t in range(p.k) if t != blk and bw[t] + vw[v] <= L]
            if not targets:
                continue
            t = max(targets, key=lambda t: (conn.get(t, 0), -bw[t]))
            a[v] = t
            bw[blk] -= vw[v]
            bw[t] += vw[v]
    if not p.is_feasible:
        raise InfeasibleError("could not balance the initial partition")
