"""Size-constrained label-propagation refinement of a k-way partition.

Each vertex moves to the block it is most strongly connected to among the
blocks that still have room, provided that strictly beats its current
block. Block weights are reserved atomically before a move is published,
so a partition that starts balanced stays balanced.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from ._adjacency import adjacency, cut_kernel, n_of, scratch_for
from ._atomics import atomic_add, atomic_store
from ._lp import try_reserve, vertex_at
from ._ratingmap import better, new_map, rm_add, rm_clear, rm_fit, rm_get, tie_key
from .clustering import _salt, visit_order
from .graph import NODE, Partition
from .parallel import run_parallel, split_range

DEFAULT_ROUNDS = 5


@njit(nogil=True, cache=True)
def refine_range(gv, vweights, blocks, block_w, limit, order, chunk_perm, local_perms,
                 block, lo, hi, keys, vals, used, state, st, sw, salt, det):
    """One LP refinement pass over positions ``[lo, hi)``.

    Returns ``(moves, gain_sum)`` where the gain is measured against the
    view the worker saw when deciding.
    """
    n = n_of(gv)
    moves = 0
    gain_sum = np.int64(0)
    for pos in range(lo, hi):
        u = vertex_at(pos, n, order, chunk_perm, local_perms, block)
        if u < 0:
            continue
        t, w = adjacency(gv, u, st, sw)
        if len(t) == 0:
            continue
        cur = blocks[u]
        rm_fit(keys, state, min(len(t), len(used)))
        for i in range(len(t)):
            rm_add(keys, vals, used, state, blocks[t[i]], w[i])
        own = rm_get(keys, vals, state, cur)
        wu = vweights[u]
        best = cur
        best_r = own
        best_tk = np.uint64(0)
        for i in range(state[0]):
            h = used[i]
            c = keys[h]
            if c == cur:
                continue
            r = vals[h]
            tk = tie_key(salt, u, c, det)
            if r > own and better(r, tk, best_r, best_tk) and block_w[c] + wu <= limit:
                best, best_r, best_tk = c, r, tk
        rm_clear(keys, vals, used, state)
        if best != cur and try_reserve(block_w, best, wu, limit):
            atomic_add(block_w, cur, -wu)
            atomic_store(blocks, u, best)
            moves += 1
            gain_sum += best_r - own
    return moves, gain_sum


class LPRefiner:
    """Reusable per-worker state for LP refinement on one k."""

    def __init__(self, k: int, workers: int = 1):
        self.k = k
        self.workers = workers
        # distinct adjacent blocks never exceed k, so a 2k map cannot overflow
        self.maps = [new_map(2 * k, occupancy_limit=k) for _ in range(workers)]

    @property
    def nbytes(self) -> int:
        return sum(a.nbytes for m in self.maps for a in m)

    def round(self, g, p: Partition, *, seed: int = 0, round_index: int = 0,
              deterministic: bool = False, order=None, scratch=None) -> tuple[int, int]:
        gv = g.kernel_view()
        n = g.n
        if n == 0:
            return 0, 0
        if order is not None:
            order = np.ascontiguousarray(order, dtype=NODE)
            chunk_perm, local, block, positions = np.zeros(1, NODE), np.zeros((1, 1), NODE), 1, len(order)
        else:
            order = np.empty(0, NODE)
            chunk_perm, local, block = visit_order(n, seed, round_index)
            positions = len(chunk_perm) * block
        if scratch is None:
            scratch = [scratch_for(gv, g.max_degree() if g.is_compressed else None)
                       for _ in range(self.workers)]
        salt = _salt(seed, round_index + 7777)
        args = []
        ranges = split_range(0, positions // block, self.workers)
        for t, (a, b) in enumerate(ranges):
            lo, hi = a * block, (b * block if t < self.workers - 1 else positions)
            args.append((gv, g.vertex_weights, p.assignment, p.block_weights,
                         p.max_block_weight, order, chunk_perm, local, block, lo, hi,
                         *self.maps[t], *scratch[t], salt, deterministic))
        res = run_parallel(refine_range, args)
        return sum(r[0] for r in res), sum(int(r[1]) for r in res)


def lp_refine(g, p: Partition, rounds: int = DEFAULT_ROUNDS, *, workers: int = 1,
              seed: int = 0, deterministic: bool = False,
              refiner: LPRefiner | None = None) -> tuple[Partition, int]:
    """Refine ``p`` in place for up to ``rounds`` rounds; stops after a round
    without moves. Returns ``(p, moved)``."""
    refiner = refiner or LPRefiner(p.k, workers)
    gv = g.kernel_view()
    scratch = [scratch_for(gv, g.max_degree() if g.is_compressed else None)
               for _ in range(refiner.workers)]
    moved = 0
    for r in range(rounds):
        m, _ = refiner.round(g, p, seed=seed, round_index=r, deterministic=deterministic,
                             scratch=scratch)
        moved += m
        if m == 0:
            break
    return p, moved


def partition_cut(g, assignment) -> int:
    return int(cut_kernel(g.kernel_view(), np.ascontiguousarray(assignment, dtype=NODE))) // 2
