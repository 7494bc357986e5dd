"""Localized k-way FM refinement.

Each search starts from a few boundary seed vertices and grows a small
region: it repeatedly applies the best-gain feasible move from a local
priority queue, pulls the moved vertex's neighbors into the queue, and at
the end rolls back to the best prefix of its moves. A vertex belongs to at
most one search at a time (claimed by compare-and-swap) and is moved at
most once per pass.

Block weights are reserved conservatively: a move adds the vertex weight
to the target block immediately but releases it from the source block only
when the search commits the move. Rolling back can therefore never
overload a block, whatever other searches do in the meantime.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from ._adjacency import adjacency, cut_kernel, n_of, scratch_for
from ._atomics import atomic_add, atomic_cas, atomic_store
from ._lp import try_reserve
from ._ratingmap import better, new_map, next_pow2, rm_add, rm_clear, rm_fit, rm_get, tie_key
from .clustering import _salt
from .gain_table import DENSE_ROW, EMPTY, NONE, GainTable, _rd, apply_move, table_get
from .graph import NODE, Partition
from .parallel import run_parallel

FREE = -1
LOCKED = -2  # moved and committed during this pass
IN_SEARCH_TOUCHED = -1
IN_SEARCH_MOVED = -2
IN_SEARCH_COMMITTED = -3


@dataclass
class FMConfig:
    max_seeds: int = 5
    adjacency_limit: int = 400
    passes: int = 3
    stall_limit: int = 64


# --- best move ------------------------------------------------------------------------


@njit(nogil=True, cache=True, inline="always")
def _consider(b, a, cur, wv, block_w, limit, salt, v, det, best, best_a, best_tk):
    if b != cur and a > 0 and block_w[b] + wv <= limit:
        tk = tie_key(salt, v, b, det)
        if best < 0 or better(a, tk, best_a, best_tk):
            return b, a, tk
    return best, best_a, best_tk


@njit(nogil=True, cache=True)
def best_move(gv, tv, v, blocks, vweights, block_w, limit, rkeys, rvals, rused, rstate,
              st, sw, salt, det):
    """``(target, gain)`` of the best feasible move of ``v``; target -1 if none."""
    cur = blocks[v]
    wv = vweights[v]
    best = -1
    best_a = np.int64(0)
    best_tk = np.uint64(0)
    if tv[0] == NONE:
        t, w = adjacency(gv, v, st, sw)
        rm_fit(rkeys, rstate, min(len(t), len(rused)))
        for i in range(len(t)):
            rm_add(rkeys, rvals, rused, rstate, blocks[t[i]], w[i])
        own = rm_get(rkeys, rvals, rstate, cur)
        for i in range(rstate[0]):
            h = rused[i]
            best, best_a, best_tk = _consider(rkeys[h], rvals[h], cur, wv, block_w, limit,
                                              salt, v, det, best, best_a, best_tk)
        rm_clear(rkeys, rvals, rused, rstate)
    else:
        own = table_get(tv, v, cur)
        if tv[8][v] == DENSE_ROW:
            for b in range(tv[1]):
                best, best_a, best_tk = _consider(b, _rd(tv, v, b), cur, wv, block_w, limit,
                                                  salt, v, det, best, best_a, best_tk)
        else:
            ko = tv[11][v]
            for s in range(tv[9][v]):
                b = tv[10][ko + s]
                if b != EMPTY:
                    best, best_a, best_tk = _consider(b, _rd(tv, v, s), cur, wv, block_w,
                                                      limit, salt, v, det, best, best_a,
                                                      best_tk)
    return best, best_a - own


# --- search-local position map and heap -----------------------------------------------


@njit(nogil=True, cache=True, inline="always")
def _pm_slot(pkeys, v):
    mask = len(pkeys) - 1
    h = np.int64((np.uint64(v) * np.uint64(0x9E3779B97F4A7C15)) >> np.uint64(40)) & mask
    while pkeys[h] != v and pkeys[h] != EMPTY:
        h = (h + 1) & mask
    return h


@njit(nogil=True, cache=True, inline="always")
def _swap(hg, hv, ht, pkeys, pvals, i, j):
    hg[i], hg[j] = hg[j], hg[i]
    hv[i], hv[j] = hv[j], hv[i]
    ht[i], ht[j] = ht[j], ht[i]
    pvals[_pm_slot(pkeys, hv[i])] = i
    pvals[_pm_slot(pkeys, hv[j])] = j


@njit(nogil=True, cache=True)
def _sift_up(hg, hv, ht, pkeys, pvals, i):
    while i > 0:
        p = (i - 1) >> 1
        if hg[p] >= hg[i]:
            break
        _swap(hg, hv, ht, pkeys, pvals, i, p)
        i = p


@njit(nogil=True, cache=True)
def _sift_down(hg, hv, ht, pkeys, pvals, i, size):
    while True:
        l = 2 * i + 1
        if l >= size:
            break
        c = l
        if l + 1 < size and hg[l + 1] > hg[l]:
            c = l + 1
        if hg[i] >= hg[c]:
            break
        _swap(hg, hv, ht, pkeys, pvals, i, c)
        i = c


@njit(nogil=True, cache=True)
def _heap_set(hg, hv, ht, pkeys, pvals, hsize, v, gain, target):
    """Insert ``v`` or change its key; ``v`` must already be in the map."""
    slot = _pm_slot(pkeys, v)
    pos = pvals[slot]
    if pos >= 0:
        old = hg[pos]
        hg[pos] = gain
        ht[pos] = target
        if gain > old:
            _sift_up(hg, hv, ht, pkeys, pvals, pos)
        else:
            _sift_down(hg, hv, ht, pkeys, pvals, pos, hsize[0])
        return
    if hsize[0] >= len(hg):
        return
    i = hsize[0]
    hsize[0] += 1
    hg[i] = gain
    hv[i] = v
    ht[i] = target
    pvals[slot] = i
    _sift_up(hg, hv, ht, pkeys, pvals, i)


@njit(nogil=True, cache=True)
def _heap_remove(hg, hv, ht, pkeys, pvals, hsize, v):
    slot = _pm_slot(pkeys, v)
    pos = pvals[slot]
    if pos < 0:
        return
    last = hsize[0] - 1
    if pos != last:
        _swap(hg, hv, ht, pkeys, pvals, pos, last)
    hsize[0] = last
    pvals[slot] = IN_SEARCH_TOUCHED
    if pos < last:
        _sift_down(hg, hv, ht, pkeys, pvals, pos, last)
        _sift_up(hg, hv, ht, pkeys, pvals, pos)


# --- the search kernel ------------------------------------------------------------------


@njit(nogil=True, cache=True)
def _move(gv, tv, v, frm, to, blocks, st, sw):
    atomic_store(blocks, v, to)
    return apply_move(gv, tv, v, frm, to, st, sw, False)


@njit(nogil=True, cache=True)
def fm_worker(gv, tv, vweights, blocks, block_w, limit, owner, seeds, cursor, sid_counter,
              max_seeds, adj_limit, stall_limit, pkeys, pvals, touched, hg, hv, ht, hsize,
              log_v, log_from, log_to, rkeys, rvals, rused, rstate, st, sw, salt, det):
    """Run localized searches until the shared seed cursor is exhausted.

    Returns ``(expected improvement, committed moves, searches)``.
    """
    total = np.int64(0)
    committed = 0
    searches = 0
    nseeds = len(seeds)
    while True:
        start = atomic_add(cursor, 0, max_seeds)
        if start >= nseeds:
            break
        sid = atomic_add(sid_counter, 0, 1) + 1
        searches += 1
        ntouched = 0
        hsize[0] = 0
        for j in range(start, min(start + max_seeds, nseeds)):
            s = seeds[j]
            if atomic_cas(owner, s, FREE, sid) != FREE:
                continue
            slot = _pm_slot(pkeys, s)
            pkeys[slot] = s
            pvals[slot] = IN_SEARCH_TOUCHED
            touched[ntouched] = s
            ntouched += 1
            tgt, gain = best_move(gv, tv, s, blocks, vweights, block_w, limit, rkeys, rvals,
                                  rused, rstate, st, sw, salt, det)
            if tgt >= 0:
                _heap_set(hg, hv, ht, pkeys, pvals, hsize, s, gain, tgt)
        nlog = 0
        delta = np.int64(0)
        best_delta = np.int64(0)
        best_len = 0
        stall = 0
        while hsize[0] > 0 and stall < stall_limit and nlog < len(log_v):
            v = hv[0]
            key = hg[0]
            _heap_remove(hg, hv, ht, pkeys, pvals, hsize, v)
            tgt, gain = best_move(gv, tv, v, blocks, vweights, block_w, limit, rkeys, rvals,
                                  rused, rstate, st, sw, salt, det)
            if tgt < 0:
                continue
            if gain < key:
                _heap_set(hg, hv, ht, pkeys, pvals, hsize, v, gain, tgt)
                continue
            if not try_reserve(block_w, tgt, vweights[v], limit):
                continue
            frm = blocks[v]
            _move(gv, tv, v, frm, tgt, blocks, st, sw)
            pvals[_pm_slot(pkeys, v)] = IN_SEARCH_MOVED
            log_v[nlog] = v
            log_from[nlog] = frm
            log_to[nlog] = tgt
            nlog += 1
            delta += gain
            if delta > best_delta:
                best_delta = delta
                best_len = nlog
                stall = 0
            else:
                stall += 1
            t, w = adjacency(gv, v, st, sw)
            for i in range(len(t)):
                x = t[i]
                slot = _pm_slot(pkeys, x)
                if pkeys[slot] == x:
                    if pvals[slot] == IN_SEARCH_MOVED:
                        continue
                elif ntouched < adj_limit and atomic_cas(owner, x, FREE, sid) == FREE:
                    pkeys[slot] = x
                    pvals[slot] = IN_SEARCH_TOUCHED
                    touched[ntouched] = x
                    ntouched += 1
                else:
                    continue
                xt, xg = best_move(gv, tv, x, blocks, vweights, block_w, limit, rkeys, rvals,
                                   rused, rstate, st, sw, salt, det)
                if xt >= 0:
                    _heap_set(hg, hv, ht, pkeys, pvals, hsize, x, xg, xt)
                else:
                    _heap_remove(hg, hv, ht, pkeys, pvals, hsize, x)
        # roll back past the best prefix; sources are still reserved
        for i in range(nlog - 1, best_len - 1, -1):
            v = log_v[i]
            _move(gv, tv, v, log_to[i], log_from[i], blocks, st, sw)
            atomic_add(block_w, log_to[i], -vweights[v])
        for i in range(best_len):
            v = log_v[i]
            atomic_add(block_w, log_from[i], -vweights[v])
            pvals[_pm_slot(pkeys, v)] = IN_SEARCH_COMMITTED
        committed += best_len
        total += best_delta
        for j in range(ntouched):
            x = touched[j]
            slot = _pm_slot(pkeys, x)
            atomic_store(owner, x, LOCKED if pvals[slot] == IN_SEARCH_COMMITTED else FREE)
        # reverse insertion order keeps every remaining probe chain intact
        for j in range(ntouched - 1, -1, -1):
            pkeys[_pm_slot(pkeys, touched[j])] = EMPTY
    return total, committed, searches


@njit(nogil=True, cache=True)
def boundary_vertices(gv, blocks, st, sw):
    n = n_of(gv)
    out = np.empty(n, np.int32)
    c = 0
    for u in range(n):
        t, _ = adjacency(gv, u, st, sw)
        b = blocks[u]
        for i in range(len(t)):
            if blocks[t[i]] != b:
                out[c] = u
                c += 1
                break
    return out[:c]


# --- driver ------------------------------------------------------------------------------


@dataclass
class FMResult:
    improvement: int
    moves: int
    passes: int


class _WorkerState:
    def __init__(self, gv, k, cfg: FMConfig, max_deg):
        region = cfg.adjacency_limit + cfg.max_seeds
        self.pkeys = np.full(next_pow2(4 * region), EMPTY, NODE)
        self.pvals = np.zeros(len(self.pkeys), np.int64)
        self.touched = np.empty(region, NODE)
        self.hg = np.empty(region, np.int64)
        self.hv = np.empty(region, NODE)
        self.ht = np.empty(region, NODE)
        self.hsize = np.zeros(1, np.int64)
        self.log_v = np.empty(region, NODE)
        self.log_from = np.empty(region, NODE)
        self.log_to = np.empty(region, NODE)
        self.rmap = new_map(2 * k, occupancy_limit=k)
        self.scratch = scratch_for(gv, max_deg)

    def args(self):
        return (self.pkeys, self.pvals, self.touched, self.hg, self.hv, self.ht, self.hsize,
                self.log_v, self.log_from, self.log_to, *self.rmap, *self.scratch)


def fm_refine(g, p: Partition, table: GainTable, config: FMConfig | None = None, *,
              workers: int = 1, seed: int = 0, deterministic: bool = False) -> FMResult:
    """Improve ``p`` in place; the table is kept consistent with ``p``.

    The returned improvement is the exact cut reduction.
    """
    cfg = config or FMConfig()
    gv = g.kernel_view()
    n = g.n
    max_deg = g.max_degree() if g.is_compressed else None
    states = [_WorkerState(gv, p.k, cfg, max_deg) for _ in range(workers)]
    owner = np.full(n, FREE, NODE)
    rng = np.random.default_rng([seed, 0xF3])
    cut = int(cut_kernel(gv, p.assignment)) // 2
    start_cut = cut
    total_moves = 0
    passes = 0
    for pass_index in range(cfg.passes):
        passes += 1
        seeds = boundary_vertices(gv, p.assignment, *states[0].scratch)
        if len(seeds) == 0:
            break
        seeds = seeds[rng.permutation(len(seeds))]
        snapshot = p.assignment.copy()
        weights_before = p.block_weights.copy()
        owner[:] = FREE
        cursor = np.zeros(1, np.int64)
        sids = np.zeros(1, np.int64)
        salt = _salt(seed, 1000 + pass_index)
        res = run_parallel(fm_worker, [
            (gv, table.tv, g.vertex_weights, p.assignment, p.block_weights,
             p.max_block_weight, owner, seeds, cursor, sids, cfg.max_seeds,
             cfg.adjacency_limit, cfg.stall_limit, *st.args(), salt, deterministic)
            for st in states])
        new_cut = int(cut_kernel(gv, p.assignment)) // 2
        moves = sum(r[1] for r in res)
        if new_cut > cut:
            # stale concurrent gains made the pass a net loss; undo it
            p.assignment[:] = snapshot
            p.block_weights[:] = weights_before
            table.__init__(g, p, table.mode, workers)
            break
        total_moves += moves
        improved = cut - new_cut
        cut = new_cut
        if improved == 0:
            break
    return FMResult(start_cut - cut, total_moves, passes)
