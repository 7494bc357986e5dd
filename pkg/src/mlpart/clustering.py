"""Size-constrained label-propagation clustering used for coarsening.

Two implementations of one LP round live here:

* :func:`lp_round_reference` is a plain sequential dict-based round. It is
  slow and exists as an oracle.
* :func:`lp_round_two_phase` is the production round. Phase one visits all
  vertices in parallel with small fixed-capacity rating maps. A vertex whose
  neighborhood touches too many distinct clusters is *bumped* to phase two,
  where bumped vertices are handled one at a time and their edges are split
  among the workers, which accumulate into one shared length-n array.

The only length-n auxiliary arrays are therefore the clustering itself, the
cluster weights and the shared accumulator, independent of the worker count.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numba import njit

from . import _lp
from ._adjacency import adjacency, degree, n_of, scratch_for
from ._ratingmap import map_nbytes, new_map, rm_add, rm_clear, rm_get, splitmix
from .graph import NODE, WEIGHT, Clustering, Graph
from .memory import NULL_TRACKER, MemoryTracker
from .parallel import run_parallel, split_range

log = logging.getLogger(__name__)

RATING_MODES = ("two_phase", "sparse_array")
ORDER_BLOCK = 1024
ORDER_POOL = 16


class InvariantError(RuntimeError):
    """An internal consistency check failed (a bug, not bad input)."""


# --- data structures -----------------------------------------------------------


class FixedCapacityRatingMap:
    """Open-addressing map ``cluster -> rating`` that never grows.

    Capacity is the smallest power of two ``>= 2 * t_bump``; at most
    ``t_bump`` keys may be stored, so the load factor stays below one half.
    """

    def __init__(self, t_bump: int, capacity: int | None = None):
        if t_bump < 1:
            raise ValueError("t_bump must be positive")
        self.t_bump = int(t_bump)
        self.arrays = new_map(capacity or 2 * self.t_bump, occupancy_limit=self.t_bump)

    @property
    def capacity(self) -> int:
        return len(self.arrays[0])

    @property
    def occupancy(self) -> int:
        return int(self.arrays[3][0])

    def __len__(self) -> int:
        return self.occupancy

    @property
    def full(self) -> bool:
        return self.occupancy >= self.t_bump

    def add(self, key: int, rating: int) -> bool:
        """Accumulate; returns False (and changes nothing) when a new key would not fit."""
        return _map_add(*self.arrays, key, rating) >= 0

    def __getitem__(self, key: int) -> int:
        keys, vals, _, state = self.arrays
        return int(rm_get(keys, vals, state, key))

    def items(self) -> list[tuple[int, int]]:
        keys, vals, used, state = self.arrays
        slots = used[: state[0]]
        return list(zip(keys[slots].tolist(), vals[slots].tolist()))

    def clear(self) -> None:
        _map_clear(*self.arrays)

    @property
    def nbytes(self) -> int:
        return map_nbytes(self.arrays)


@njit(cache=True)
def _map_add(keys, vals, used, state, key, w):
    return rm_add(keys, vals, used, state, key, w)


@njit(cache=True)
def _map_clear(keys, vals, used, state):
    rm_clear(keys, vals, used, state)


class SparseRatingArray:
    """Shared length-n accumulator plus per-worker first-touch lists.

    The lists share one backing array; worker ``t`` owns the slice starting
    at ``starts[t]``. Callers pick the slices so they cannot overlap.
    """

    def __init__(self, n: int, workers: int, list_capacity: int,
                 tracker: MemoryTracker = NULL_TRACKER):
        self.dense = tracker.zeros("lp.sparse_array", n, WEIGHT)
        self.lst = tracker.empty("lp.touched_lists", max(list_capacity, 1), NODE)
        self.starts = np.zeros(workers, np.int64)
        self.counts = np.zeros(workers, np.int64)
        self._tracker = tracker

    @property
    def workers(self) -> int:
        return len(self.starts)

    def set_slices(self, starts) -> None:
        self.starts[:] = starts
        self.counts[:] = 0

    def worker_list(self, t: int) -> np.ndarray:
        s = self.starts[t]
        return self.lst[s : s + self.counts[t]]

    def nonzero(self) -> np.ndarray:
        parts = [self.worker_list(t) for t in range(self.workers)]
        return np.concatenate(parts) if parts else np.empty(0, NODE)

    def reset(self) -> None:
        self.dense[self.nonzero()] = 0
        self.counts[:] = 0

    def is_clean(self) -> bool:
        return not self.dense.any()

    def release(self) -> None:
        self._tracker.release(self.dense, self.lst)


def flush_rating_map(a: SparseRatingArray, r: FixedCapacityRatingMap, worker: int) -> None:
    """Add every entry of ``r`` into ``a.dense`` atomically, then clear ``r``.

    A cluster is appended to ``worker``'s list iff the dense entry was zero
    before the addition, so each touched cluster is listed exactly once.
    """
    _lp.flush_into(*r.arrays, a.dense, a.lst, a.starts[worker], a.counts, worker)


@dataclass
class BumpQueue:
    """Vertices deferred to phase two, collected per worker."""

    parts: list[np.ndarray] = field(default_factory=list)

    def vertices(self) -> np.ndarray:
        if not self.parts:
            return np.empty(0, NODE)
        return np.concatenate(self.parts)

    def __len__(self) -> int:
        return sum(len(p) for p in self.parts)


# --- reference round -----------------------------------------------------------


def _tie(salt: int, u: int, c: int, deterministic: bool) -> int:
    if deterministic:
        return 0xFFFFFFFF - c
    mixed = (u * 0x100000001 + c) & 0xFFFFFFFFFFFFFFFF
    return int(splitmix(np.uint64(salt) ^ splitmix(np.uint64(mixed))))


def lp_round_reference(g, c: Clustering, order, *, deterministic: bool = True,
                       salt: int = 0) -> int:
    """One sequential LP round over ``order``. Slow; meant as an oracle."""
    g = g.to_graph()
    labels = c.assignment
    weights = c.cluster_weights
    limit = c.max_cluster_weight
    moves = 0
    for u in order:
        u = int(u)
        lo, hi = g.offsets[u], g.offsets[u + 1]
        if lo == hi:
            continue
        ratings: dict[int, int] = {}
        for v, w in zip(g.targets[lo:hi].tolist(), g.edge_weights[lo:hi].tolist()):
            key = int(labels[v])
            ratings[key] = ratings.get(key, 0) + w
        cur = int(labels[u])
        wu = int(g.vertex_weights[u])
        best, best_r, best_tk = cur, ratings.get(cur, 0), _tie(salt, u, cur, deterministic)
        for cand, r in ratings.items():
            if cand == cur:
                continue
            tk = _tie(salt, u, cand, deterministic)
            if (r, tk) > (best_r, best_tk) and weights[cand] + wu <= limit:
                best, best_r, best_tk = cand, r, tk
        if best != cur:
            weights[best] += wu
            weights[cur] -= wu
            labels[u] = best
            moves += 1
    return moves


# --- two-phase round -----------------------------------------------------------


@njit(nogil=True, cache=True)
def _bump_candidates(gv, t_bump):
    """(number of vertices with degree >= t_bump, their maximum degree)."""
    count = 0
    best = 0
    for u in range(n_of(gv)):
        d = degree(gv, u)
        if d >= t_bump:
            count += 1
            if d > best:
                best = d
    return count, best


class LPWorkspace:
    """Buffers shared by all rounds of one clustering run."""

    def __init__(self, g, workers: int, t_bump: int, rating_mode: str,
                 tracker: MemoryTracker = NULL_TRACKER, bump_capacity: int | None = None):
        if rating_mode not in RATING_MODES:
            raise ValueError(f"unknown rating mode {rating_mode!r}")
        if t_bump < 2:
            raise ValueError("t_bump must be at least 2")
        self.gv = g.kernel_view()
        self.n = g.n
        self.workers = workers
        self.t_bump = t_bump
        self.rating_mode = rating_mode
        self.tracker = tracker
        self._handles: list = []
        n = self.n
        if g.is_compressed:
            self.scratch = [scratch_for(self.gv, g.max_degree()) for _ in range(workers)]
            for st, sw in self.scratch:
                tracker.track("lp.decode_scratch", st)
                tracker.track("lp.decode_scratch", sw)
                self._handles += [st, sw]
        else:
            self.scratch = [scratch_for(self.gv)] * workers
        empty_i32 = np.empty(0, NODE)
        empty_i64 = np.empty(0, WEIGHT)
        if rating_mode == "two_phase":
            self.maps = [FixedCapacityRatingMap(t_bump) for _ in range(workers)]
            for m in self.maps:
                self._handles.append(tracker.add_bytes("lp.rating_maps", m.nbytes))
            count, max_deg = _bump_candidates(self.gv, t_bump)
            cap = count if bump_capacity is None else bump_capacity
            self.bumped = [tracker.empty("lp.bump_queue", cap, NODE) for _ in range(workers)]
            self._handles += self.bumped
            self.sparse = SparseRatingArray(n, workers, max_deg, tracker)
            self.dense = [empty_i64] * workers
            self.dlist = [empty_i32] * workers
        else:
            dummy = FixedCapacityRatingMap(2)
            self.maps = [dummy] * workers
            self.bumped = [empty_i32] * workers
            self.sparse = None
            self.dense = [tracker.zeros("lp.worker_sparse_array", n, WEIGHT)
                          for _ in range(workers)]
            self.dlist = [tracker.empty("lp.worker_touched_list", n, NODE)
                          for _ in range(workers)]
            self._handles += self.dense + self.dlist

    def release(self) -> None:
        self.tracker.release(*self._handles)
        if self.sparse is not None:
            self.sparse.release()


def visit_order(n: int, seed: int, round_index: int):
    """Chunked random order: a permutation of 1024-vertex chunks, each chunk
    traversed by one of a small pool of in-chunk permutations.

    Avoids materializing an n-sized permutation per round.
    """
    rng = np.random.default_rng([seed, round_index])
    n_chunks = max(1, -(-n // ORDER_BLOCK))
    chunk_perm = rng.permutation(n_chunks).astype(NODE)
    block = min(ORDER_BLOCK, max(n, 1))
    local = np.stack([rng.permutation(block) for _ in range(ORDER_POOL)]).astype(NODE)
    return chunk_perm, local, block


def _salt(seed: int, round_index: int) -> np.uint64:
    return np.uint64(splitmix(np.uint64((seed * 0x10001 + round_index) & 0xFFFFFFFFFFFFFFFF)))


def lp_round_two_phase(g, c: Clustering, t_bump: int = 10000, *, workers: int = 1,
                       seed: int = 0, round_index: int = 0, deterministic: bool = True,
                       order=None, workspace: LPWorkspace | None = None,
                       inspect: Callable[[int, dict], None] | None = None,
                       bump_queue: BumpQueue | None = None) -> int:
    """One two-phase LP round; returns the number of moved vertices.

    ``order`` fixes the visit order (tests); otherwise a chunked random order
    derived from ``(seed, round_index)`` is used. ``inspect(u, ratings)`` is
    called in phase two with the accumulated ratings of each bumped vertex
    just before its decision.
    """
    own = workspace is None
    ws = workspace or LPWorkspace(g, workers, t_bump, "two_phase")
    try:
        return _round(g, c, ws, seed, round_index, deterministic, order, inspect, bump_queue)
    finally:
        if own:
            ws.release()


def _round(g, c, ws, seed, round_index, deterministic, order, inspect, bump_queue):
    n = ws.n
    if n == 0:
        return 0
    p = ws.workers
    gv = ws.gv
    salt = _salt(seed, round_index)
    vw = g.vertex_weights
    labels = c.assignment
    cw = c.cluster_weights
    limit = c.max_cluster_weight
    if order is not None:
        order = np.ascontiguousarray(order, dtype=NODE)
        positions = len(order)
        chunk_perm = np.zeros(1, NODE)
        local = np.zeros((1, 1), NODE)
        block = 1
    else:
        order = np.empty(0, NODE)
        chunk_perm, local, block = visit_order(n, seed, round_index)
        positions = len(chunk_perm) * block
    # Chunk-aligned ranges keep each worker on contiguous memory.
    ranges = split_range(0, positions // block, p)
    mode = _lp.MODE_MAP if ws.rating_mode == "two_phase" else _lp.MODE_DENSE
    args = []
    for t, (a, b) in enumerate(ranges):
        lo, hi = a * block, b * block
        if t == p - 1:
            hi = positions
        st, sw = ws.scratch[t]
        args.append((gv, vw, labels, cw, limit, order, chunk_perm, local, block, lo, hi,
                     *ws.maps[t].arrays, st, sw, salt, deterministic, ws.bumped[t], mode,
                     ws.dense[t], ws.dlist[t]))
    results = run_parallel(_lp.phase_one, args)
    moves = sum(r[0] for r in results)
    queue = BumpQueue([ws.bumped[t][: results[t][1]] for t in range(p)])
    if bump_queue is not None:
        bump_queue.parts = [q.copy() for q in queue.parts]
    bumped = queue.vertices()
    if len(bumped) == 0:
        return moves
    sparse = ws.sparse
    if p == 1 and inspect is None:
        st, sw = ws.scratch[0]
        sparse.set_slices([0])
        moves += _lp.phase_two_sequential(gv, vw, labels, cw, limit, bumped,
                                          *ws.maps[0].arrays, st, sw, sparse.dense,
                                          sparse.lst, salt, deterministic)
        return moves
    st, sw = ws.scratch[0]
    for u in bumped.tolist():
        t_arr, w_arr = adjacency(gv, u, st, sw)
        parts = split_range(0, len(t_arr), p)
        sparse.set_slices([lo for lo, _ in parts])
        run_parallel(_lp.accumulate, [
            (t_arr, w_arr, lo, hi, labels, *ws.maps[t].arrays, sparse.dense, sparse.lst,
             sparse.counts, t)
            for t, (lo, hi) in enumerate(parts)])
        if inspect is not None:
            touched = sparse.nonzero()
            inspect(u, dict(zip(touched.tolist(), sparse.dense[touched].tolist())))
        moves += _lp.decide(u, vw, labels, cw, limit, sparse.dense, sparse.lst,
                            sparse.starts, sparse.counts, salt, deterministic)
    return moves


# --- driver --------------------------------------------------------------------


def coarsening_cluster_weight(total_weight: int, n: int, k: int, shrink: float = 2.0) -> int:
    """Cluster weight budget ``ceil(W / max(2k, n / shrink))``."""
    target = max(2 * k, n / shrink, 1)
    return max(1, math.ceil(total_weight / target))


def singleton_fallback(g, c: Clustering, tracker: MemoryTracker = NULL_TRACKER) -> int:
    """Pair singleton clusters whose heaviest neighbors sit in the same cluster.

    Isolated singletons form one group of their own. Returns the merge count.
    """
    n = g.n
    if n == 0:
        return 0
    gv = g.kernel_view()
    sizes = tracker.track("lp.fallback", _lp.cluster_sizes(c.assignment, n))
    st, sw = scratch_for(gv, g.max_degree() if g.is_compressed else None)
    verts, fav = _lp.favored_labels(gv, c.assignment, sizes, st, sw)
    tracker.release(sizes)
    tracker.track("lp.fallback", verts)
    tracker.track("lp.fallback", fav)
    idx = np.lexsort((verts, fav))
    merged = _lp.pair_singletons(verts[idx], fav[idx], g.vertex_weights, c.assignment,
                                 c.cluster_weights, c.max_cluster_weight)
    tracker.release(verts, fav)
    return int(merged)


def cluster_coarsening(g, max_cluster_weight: int, rounds: int = 5, t_bump: int = 10000, *,
                       workers: int = 1, seed: int = 0, deterministic: bool = False,
                       rating_mode: str = "two_phase", shrink: float = 2.0,
                       fallback: bool = True,
                       tracker: MemoryTracker = NULL_TRACKER) -> Clustering:
    """Run ``rounds`` LP rounds from singletons, then the singleton fallback
    if fewer than ``n - n / shrink`` vertices were absorbed."""
    if rounds < 0:
        raise ValueError("rounds must be nonnegative")
    c = Clustering.singletons(g, max_cluster_weight)
    tracker.track("lp.clustering", c.assignment)
    tracker.track("lp.cluster_weights", c.cluster_weights)
    if rounds == 0 or g.n == 0:
        return c
    ws = LPWorkspace(g, workers, t_bump, rating_mode, tracker)
    try:
        for r in range(rounds):
            moves = _round(g, c, ws, seed, r, deterministic, None, None, None)
            log.debug("lp round %d: %d moves", r, moves)
    finally:
        ws.release()
    if fallback:
        sizes = tracker.track("lp.fallback", _lp.cluster_sizes(c.assignment, g.n))
        n_clusters = int(np.count_nonzero(sizes))
        tracker.release(sizes)
        del sizes
        if n_clusters > g.n / shrink:
            merged = singleton_fallback(g, c, tracker)
            log.debug("singleton fallback merged %d vertices", merged)
    return c


__all__ = [
    "BumpQueue",
    "FixedCapacityRatingMap",
    "InvariantError",
    "LPWorkspace",
    "RATING_MODES",
    "SparseRatingArray",
    "cluster_coarsening",
    "coarsening_cluster_weight",
    "flush_rating_map",
    "lp_round_reference",
    "lp_round_two_phase",
    "singleton_fallback",
    "visit_order",
]
