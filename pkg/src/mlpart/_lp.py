"""Numba kernels for size-constrained label propagation.

Shared by coarsening (clusters) and refinement (blocks): both pick, for a
vertex, the heaviest-connected label that still has room for it.
"""

import numpy as np
from numba import njit

from ._adjacency import adjacency, n_of
from ._atomics import atomic_add, atomic_cas, atomic_load, atomic_store
from ._ratingmap import better, rm_add, rm_clear, rm_fit, rm_get, tie_key

MODE_MAP = 0
MODE_DENSE = 1


@njit(nogil=True, cache=True, inline="always")
def try_reserve(weights, label, w, limit):
    """Compare-and-reserve ``w`` units on ``weights[label]``."""
    while True:
        cur = atomic_load(weights, label)
        if cur + w > limit:
            return False
        if atomic_cas(weights, label, cur, cur + w) == cur:
            return True


@njit(nogil=True, cache=True, inline="always")
def vertex_at(pos, n, order, chunk_perm, local_perms, block):
    """Vertex visited at position ``pos``; -1 for padding positions."""
    if len(order) > 0:
        return order[pos]
    ch = chunk_perm[pos // block]
    u = ch * block + local_perms[ch % local_perms.shape[0], pos % block]
    if u >= n:
        return -1
    return u


@njit(nogil=True, cache=True, inline="always")
def _pick_from_map(keys, vals, used, state, cur, wu, labels_w, limit, salt, u, det):
    best = cur
    best_r = rm_get(keys, vals, state, cur)
    best_tk = tie_key(salt, u, cur, det)
    for i in range(state[0]):
        h = used[i]
        c = keys[h]
        if c == cur:
            continue
        r = vals[h]
        tk = tie_key(salt, u, c, det)
        if better(r, tk, best_r, best_tk) and labels_w[c] + wu <= limit:
            best, best_r, best_tk = c, r, tk
    return best


@njit(nogil=True, cache=True, inline="always")
def _pick_from_dense(dense, lst, starts, counts, cur, wu, labels_w, limit, salt, u, det):
    best = cur
    best_r = dense[cur]
    best_tk = tie_key(salt, u, cur, det)
    for t in range(len(starts)):
        for j in range(starts[t], starts[t] + counts[t]):
            c = lst[j]
            if c == cur:
                continue
            r = dense[c]
            tk = tie_key(salt, u, c, det)
            if better(r, tk, best_r, best_tk) and labels_w[c] + wu <= limit:
                best, best_r, best_tk = c, r, tk
    return best


@njit(nogil=True, cache=True)
def phase_one(gv, vweights, labels, labels_w, limit, order, chunk_perm, local_perms,
              block, lo, hi, keys, vals, used, state, st, sw, salt, det, bumped,
              mode, dense, dlist):
    """Vertex-parallel pass over positions ``[lo, hi)``.

    Returns ``(moves, bumped_count)``. In ``MODE_DENSE`` the worker owns a
    length-n accumulator and never bumps.
    """
    n = n_of(gv)
    moves = 0
    nb = 0
    zero = np.zeros(1, np.int64)
    one = np.zeros(1, np.int64)
    for pos in range(lo, hi):
        u = vertex_at(pos, n, order, chunk_perm, local_perms, block)
        if u < 0:
            continue
        t, w = adjacency(gv, u, st, sw)
        if len(t) == 0:
            continue
        cur = labels[u]
        wu = vweights[u]
        if mode == MODE_MAP:
            rm_fit(keys, state, min(len(t), len(used)))
            ok = True
            for i in range(len(t)):
                if rm_add(keys, vals, used, state, labels[t[i]], w[i]) < 0:
                    ok = False
                    break
            if not ok:
                rm_clear(keys, vals, used, state)
                bumped[nb] = u
                nb += 1
                continue
            best = _pick_from_map(keys, vals, used, state, cur, wu, labels_w, limit,
                                  salt, u, det)
            rm_clear(keys, vals, used, state)
        else:
            cnt = 0
            for i in range(len(t)):
                c = labels[t[i]]
                if dense[c] == 0:
                    dlist[cnt] = c
                    cnt += 1
                dense[c] += w[i]
            one[0] = cnt
            best = _pick_from_dense(dense, dlist, zero, one, cur, wu, labels_w,
                                    limit, salt, u, det)
            for j in range(cnt):
                dense[dlist[j]] = 0
        if best != cur and try_reserve(labels_w, best, wu, limit):
            atomic_add(labels_w, cur, -wu)
            atomic_store(labels, u, best)
            moves += 1
    return moves, nb


@njit(nogil=True, cache=True, inline="always")
def flush_map(keys, vals, used, state, dense, lst, start, cnt):
    """Move all map entries into ``dense``; record first touches in ``lst``."""
    for i in range(state[0]):
        h = used[i]
        c = keys[h]
        if atomic_add(dense, c, vals[h]) == 0:
            lst[start + cnt] = c
            cnt += 1
    rm_clear(keys, vals, used, state)
    return cnt


@njit(nogil=True, cache=True)
def flush_into(keys, vals, used, state, dense, lst, start, counts, widx):
    """Python entry point to ``flush_map`` for worker ``widx``."""
    counts[widx] = flush_map(keys, vals, used, state, dense, lst, start, counts[widx])


@njit(nogil=True, cache=True)
def accumulate(t, w, lo, hi, labels, keys, vals, used, state, dense, lst, counts, widx):
    """Edge-parallel share of a bumped vertex: arcs ``[lo, hi)`` into ``dense``.

    The worker's first-touch list lives in ``lst[lo:hi]``.
    """
    cnt = 0
    rm_fit(keys, state, len(used))
    for i in range(lo, hi):
        c = labels[t[i]]
        if rm_add(keys, vals, used, state, c, w[i]) < 0:
            cnt = flush_map(keys, vals, used, state, dense, lst, lo, cnt)
            rm_add(keys, vals, used, state, c, w[i])
    counts[widx] = flush_map(keys, vals, used, state, dense, lst, lo, cnt)


@njit(nogil=True, cache=True)
def decide(u, vweights, labels, labels_w, limit, dense, lst, starts, counts, salt, det):
    """Phase-two decision for ``u``; zeroes every touched dense entry."""
    cur = labels[u]
    wu = vweights[u]
    best = _pick_from_dense(dense, lst, starts, counts, cur, wu, labels_w, limit,
                            salt, u, det)
    for t in range(len(starts)):
        for j in range(starts[t], starts[t] + counts[t]):
            dense[lst[j]] = 0
    if best != cur and labels_w[best] + wu <= limit:
        labels_w[best] += wu
        labels_w[cur] -= wu
        labels[u] = best
        return 1
    return 0


@njit(nogil=True, cache=True)
def phase_two_sequential(gv, vweights, labels, labels_w, limit, bumped, keys, vals,
                         used, state, st, sw, dense, lst, salt, det):
    """Phase two with a single worker: the edge-parallel split degenerates."""
    moves = 0
    starts = np.zeros(1, np.int64)
    counts = np.zeros(1, np.int64)
    for b in range(len(bumped)):
        u = bumped[b]
        t, w = adjacency(gv, u, st, sw)
        accumulate(t, w, 0, len(t), labels, keys, vals, used, state, dense, lst,
                   counts, 0)
        moves += decide(u, vweights, labels, labels_w, limit, dense, lst, starts,
                        counts, salt, det)
    return moves


@njit(nogil=True, cache=True)
def cluster_sizes(labels, n_labels):
    sizes = np.zeros(n_labels, np.int32)
    for u in range(len(labels)):
        sizes[labels[u]] += 1
    return sizes


@njit(nogil=True, cache=True)
def favored_labels(gv, labels, sizes, st, sw):
    """For singleton vertices, the label of the heaviest neighbor.

    Returns ``(vertices, favored)``; isolated singletons get favored -1.
    """
    n = n_of(gv)
    count = 0
    for u in range(n):
        if sizes[labels[u]] == 1:
            count += 1
    verts = np.empty(count, np.int32)
    fav = np.empty(count, np.int64)
    j = 0
    for u in range(n):
        if sizes[labels[u]] != 1:
            continue
        t, w = adjacency(gv, u, st, sw)
        best = -1
        best_w = -1
        for i in range(len(t)):
            if w[i] > best_w:
                best_w = w[i]
                best = labels[t[i]]
        verts[j] = u
        fav[j] = best
        j += 1
    return verts, fav


@njit(nogil=True, cache=True)
def pair_singletons(verts, fav, vweights, labels, labels_w, limit):
    """Greedily pair consecutive singletons sharing a favored label."""
    merged = 0
    pending = -1
    for j in range(len(verts)):
        v = verts[j]
        if pending >= 0 and fav[pending] == fav[j]:
            u = verts[pending]
            cu = labels[u]
            if labels_w[cu] + vweights[v] <= limit:
                labels_w[labels[v]] -= vweights[v]
                labels_w[cu] += vweights[v]
                labels[v] = cu
                merged += 1
                pending = -1
                continue
        pending = j
    return merged
