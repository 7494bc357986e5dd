"""Gain table caching the affinity of every vertex to every adjacent block.

The affinity ``w(v, B)`` is the summed weight of edges from ``v`` into
block ``B``; the gain of moving ``v`` to ``B`` is ``w(v, B) - w(v, Π(v))``.

Three layouts sit behind one interface:

``sparse``
    Vertices with at least ``k`` neighbors get a dense row of ``k`` slots.
    Every other vertex gets a tiny linear-probing table with
    ``min(2 deg(v), k - 1)`` slots that stores only nonzero affinities.
    Each vertex stores its values at the smallest width in {8, 16, 32, 64}
    bits that can hold its total incident weight, all in one byte arena.
``dense``
    ``n * k`` 64-bit slots.
``none``
    Nothing is cached; affinities are recomputed from the neighborhood.

Dense rows are updated with atomic additions. Tiny tables are guarded by a
per-vertex spinlock because an affinity dropping to zero deletes its entry,
and deletion shifts later entries of the probe chain back into the gap.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from ._adjacency import adjacency, n_of, scratch_for
from ._atomics import atomic_add, atomic_cas, atomic_store
from .graph import NODE, WEIGHT
from .parallel import run_parallel, split_range

MODES = ("sparse", "dense", "none")
SPARSE, DENSE, NONE = 0, 1, 2
DENSE_ROW, TINY = 0, 1
EMPTY = -1
WIDTHS = (8, 16, 32, 64)

ERR_FULL = 1
ERR_NEGATIVE = 2
ERR_WIDTH = 4


def entry_width(total_incident_weight: int) -> int:
    """Smallest width w in {8, 16, 32, 64} with 2**w > U."""
    for w in WIDTHS:
        if total_incident_weight < (1 << w):
            return w
    raise OverflowError("incident weight exceeds 64 bits")


# --- layout -------------------------------------------------------------------------


@njit(nogil=True, cache=True)
def _degrees_and_weight(gv, st, sw, deg_out, total_out):
    for v in range(n_of(gv)):
        t, w = adjacency(gv, v, st, sw)
        deg_out[v] = len(t)
        s = np.int64(0)
        for i in range(len(w)):
            s += w[i]
        total_out[v] = s


@njit(nogil=True, cache=True)
def _offsets(width, cap, kind, off, key_off):
    """Assign each vertex an aligned region; element offsets in its width's view."""
    pos = 0
    kpos = 0
    for v in range(len(width)):
        nbytes = 1 << width[v]
        pos = (pos + nbytes - 1) // nbytes * nbytes
        off[v] = pos // nbytes
        pos += cap[v] * nbytes
        key_off[v] = kpos
        if kind[v] == TINY:
            kpos += cap[v]
    return (pos + 7) // 8 * 8, kpos


# --- element access -------------------------------------------------------------------
# tv = (mode, k, a8, a16, a32, a64, off, width, kind, cap, keys, key_off, locks)


@njit(nogil=True, cache=True, inline="always")
def _rd(tv, v, slot):
    i = tv[6][v] + slot
    w = tv[7][v]
    if w == 0:
        return np.int64(tv[2][i])
    if w == 1:
        return np.int64(tv[3][i])
    if w == 2:
        return np.int64(tv[4][i])
    return np.int64(tv[5][i])


@njit(nogil=True, cache=True, inline="always")
def _wr(tv, v, slot, value):
    i = tv[6][v] + slot
    w = tv[7][v]
    if w == 0:
        tv[2][i] = np.uint8(value)
    elif w == 1:
        tv[3][i] = np.uint16(value)
    elif w == 2:
        tv[4][i] = np.uint32(value)
    else:
        tv[5][i] = np.uint64(value)


@njit(nogil=True, cache=True, inline="always")
def _atomic_add_slot(tv, v, slot, delta):
    """Atomic add on a dense-row slot (two's complement wraps negative deltas)."""
    i = tv[6][v] + slot
    w = tv[7][v]
    if w == 0:
        atomic_add(tv[2], i, np.uint8(delta & 0xFF))
    elif w == 1:
        atomic_add(tv[3], i, np.uint16(delta & 0xFFFF))
    elif w == 2:
        atomic_add(tv[4], i, np.uint32(delta & 0xFFFFFFFF))
    else:
        atomic_add(tv[5], i, np.uint64(delta))


@njit(nogil=True, cache=True, inline="always")
def _check(val, wcode):
    if val < 0:
        return ERR_NEGATIVE
    if wcode < 3 and val >= (np.int64(1) << (8 << wcode)):
        return ERR_WIDTH
    return 0


@njit(nogil=True, cache=True, inline="always")
def home_slot(b, cap):
    h = (np.uint64(b) * np.uint64(0x9E3779B1)) & np.uint64(0xFFFFFFFF)
    return np.int64((h * np.uint64(cap)) >> np.uint64(32))


@njit(nogil=True, cache=True, inline="always")
def _lock(locks, v):
    while atomic_cas(locks, v, 0, 1) != 0:
        pass


@njit(nogil=True, cache=True, inline="always")
def _unlock(locks, v):
    atomic_store(locks, v, 0)


@njit(nogil=True, cache=True)
def _tiny_find(tv, v, b):
    """Slot holding ``b`` or -1."""
    cap = tv[9][v]
    ko = tv[11][v]
    keys = tv[10]
    if cap == 0:
        return -1
    s = home_slot(b, cap)
    for _ in range(cap):
        key = keys[ko + s]
        if key == b:
            return s
        if key == EMPTY:
            return -1
        s += 1
        if s == cap:
            s = 0
    return -1


@njit(nogil=True, cache=True)
def _tiny_delete(tv, v, i):
    """Remove slot ``i`` and backshift the rest of its probe chain."""
    cap = tv[9][v]
    ko = tv[11][v]
    keys = tv[10]
    keys[ko + i] = EMPTY
    _wr(tv, v, i, 0)
    j = i
    while True:
        j += 1
        if j == cap:
            j = 0
        kj = keys[ko + j]
        if kj == EMPTY or j == i:
            return
        h = home_slot(kj, cap)
        # entry at j may stay iff its home lies cyclically in (i, j]
        if i <= j:
            stays = i < h <= j
        else:
            stays = h > i or h <= j
        if stays:
            continue
        keys[ko + i] = kj
        _wr(tv, v, i, _rd(tv, v, j))
        keys[ko + j] = EMPTY
        _wr(tv, v, j, 0)
        i = j


@njit(nogil=True, cache=True)
def _tiny_add(tv, v, b, delta):
    cap = tv[9][v]
    ko = tv[11][v]
    keys = tv[10]
    if cap == 0:
        return ERR_FULL
    s = home_slot(b, cap)
    for _ in range(cap):
        key = keys[ko + s]
        if key == b:
            val = _rd(tv, v, s) + delta
            if val < 0:
                return ERR_NEGATIVE
            if val == 0:
                _tiny_delete(tv, v, s)
            else:
                err = _check(val, tv[7][v])
                if err:
                    return err
                _wr(tv, v, s, val)
            return 0
        if key == EMPTY:
            if delta < 0:
                return ERR_NEGATIVE
            err = _check(delta, tv[7][v])
            if err:
                return err
            keys[ko + s] = b
            _wr(tv, v, s, delta)
            return 0
        s += 1
        if s == cap:
            s = 0
    return ERR_FULL


@njit(nogil=True, cache=True, inline="always")
def table_add(tv, v, b, delta, check):
    """``w(v, b) += delta``; returns an error bitmask (0 on success)."""
    if tv[8][v] == DENSE_ROW:
        if check:
            # test mode is single-threaded, so read-then-add is exact
            err = _check(_rd(tv, v, b) + delta, tv[7][v])
            if err:
                return err
        _atomic_add_slot(tv, v, b, delta)
        return 0
    _lock(tv[12], v)
    err = _tiny_add(tv, v, b, delta)
    _unlock(tv[12], v)
    return err


@njit(nogil=True, cache=True, inline="always")
def table_get(tv, v, b):
    if tv[8][v] == DENSE_ROW:
        return _rd(tv, v, b)
    s = _tiny_find(tv, v, b)
    if s < 0:
        return np.int64(0)
    return _rd(tv, v, s)


@njit(nogil=True, cache=True)
def affinity_scan(gv, blocks, v, b, st, sw):
    t, w = adjacency(gv, v, st, sw)
    s = np.int64(0)
    for i in range(len(t)):
        if blocks[t[i]] == b:
            s += w[i]
    return s


@njit(nogil=True, cache=True)
def apply_move(gv, tv, u, frm, to, st, sw, check):
    """Update the neighbors' affinities after ``u`` moved ``frm -> to``."""
    err = 0
    if tv[0] == NONE:
        return err
    t, w = adjacency(gv, u, st, sw)
    for i in range(len(t)):
        v = t[i]
        err |= table_add(tv, v, frm, -w[i], check)
        err |= table_add(tv, v, to, w[i], check)
    return err


@njit(nogil=True, cache=True)
def _fill(gv, tv, blocks, lo, hi, st, sw):
    err = 0
    for v in range(lo, hi):
        t, w = adjacency(gv, v, st, sw)
        for i in range(len(t)):
            b = blocks[t[i]]
            if tv[8][v] == DENSE_ROW:
                _wr(tv, v, b, _rd(tv, v, b) + w[i])
            else:
                err |= _tiny_add(tv, v, b, w[i])
    return err


@njit(nogil=True, cache=True)
def _dense_matrix(tv, n, k):
    out = np.zeros((n, k), np.int64)
    for v in range(n):
        if tv[8][v] == DENSE_ROW:
            for b in range(k):
                out[v, b] = _rd(tv, v, b)
        else:
            ko = tv[11][v]
            for s in range(tv[9][v]):
                key = tv[10][ko + s]
                if key != EMPTY:
                    out[v, key] = _rd(tv, v, s)
    return out


class GainTableError(RuntimeError):
    """A table update violated an invariant (overflow, negative, full)."""


class GainTable:
    """Affinity cache for one graph and partition (see module docstring)."""

    def __init__(self, g, p, mode: str = "sparse", workers: int = 1):
        if mode not in MODES:
            raise ValueError(f"unknown gain table mode {mode!r}")
        self.mode = mode
        self.k = p.k
        self.n = g.n
        self.graph = g
        self.partition = p
        gv = g.kernel_view()
        self.gv = gv
        self.scratch = scratch_for(gv, g.max_degree() if g.is_compressed else None)
        n, k = self.n, self.k
        self.width = np.zeros(n, np.uint8)
        self.kind = np.zeros(n, np.uint8)
        self.cap = np.zeros(n, np.int32)
        self.off = np.zeros(n, np.int64)
        self.key_off = np.zeros(n, np.int64)
        self.locks = np.zeros(n, np.uint8)
        if mode == "none":
            self.arena = np.zeros(0, np.uint8)
            self.keys = np.zeros(0, NODE)
        else:
            deg = np.empty(n, np.int64)
            total = np.empty(n, np.int64)
            _degrees_and_weight(gv, *self.scratch, deg, total)
            self.width[:] = np.select([total < 256, total < 65536, total < 1 << 32], [0, 1, 2], 3)
            if mode == "dense":
                self.kind[:] = DENSE_ROW
                self.width[:] = 3
                self.cap[:] = k
            else:
                dense = deg >= k
                self.kind[:] = np.where(dense, DENSE_ROW, TINY)
                self.cap[:] = np.where(dense, k, np.minimum(2 * deg, k - 1))
            nbytes, nkeys = _offsets(self.width, self.cap, self.kind, self.off, self.key_off)
            self.arena = np.zeros(nbytes, np.uint8)
            self.keys = np.full(nkeys, EMPTY, NODE)
        self.tv = (SPARSE if mode == "sparse" else DENSE if mode == "dense" else NONE, k,
                   self.arena, self.arena.view(np.uint16), self.arena.view(np.uint32),
                   self.arena.view(np.uint64), self.off, self.width, self.kind, self.cap,
                   self.keys, self.key_off, self.locks)
        if mode != "none":
            parts = split_range(0, n, workers)
            scratches = [self.scratch] + [scratch_for(gv, g.max_degree() if g.is_compressed else None)
                                          for _ in range(workers - 1)]
            errs = run_parallel(_fill, [(gv, self.tv, p.assignment, lo, hi, *scratches[t])
                                        for t, (lo, hi) in enumerate(parts)])
            if any(errs):
                raise GainTableError("table construction overflowed a tiny table")

    # -- queries ---------------------------------------------------------------

    def affinity(self, v: int, b: int) -> int:
        if self.mode == "none":
            return int(affinity_scan(self.gv, self.partition.assignment, v, b, *self.scratch))
        return int(table_get(self.tv, v, b))

    def gain(self, v: int, target: int, assignment=None) -> int:
        assignment = self.partition.assignment if assignment is None else assignment
        cur = int(assignment[v])
        if target == cur:
            raise ValueError("target block equals the current block")
        return self.affinity(v, target) - self.affinity(v, cur)

    def apply_move_update(self, u: int, frm: int, to: int, check: bool = False) -> None:
        """Account for ``u`` having moved ``frm -> to`` (already committed)."""
        if frm == to:
            raise ValueError("no-op move")
        if self.mode == "none":
            return
        err = apply_move(self.gv, self.tv, u, frm, to, *self.scratch, check)
        if err:
            raise GainTableError(f"update after moving {u} failed (code {err})")

    # -- introspection --------------------------------------------------------------

    def entry_width(self, v: int) -> int:
        return WIDTHS[int(self.width[v])]

    def is_dense_row(self, v: int) -> bool:
        return self.mode != "none" and self.kind[v] == DENSE_ROW

    def capacity(self, v: int) -> int:
        return int(self.cap[v])

    def tiny_slots(self, v: int) -> list:
        """Slot contents ``(block, affinity)`` or ``None`` for empty slots."""
        if self.is_dense_row(v) or self.mode == "none":
            raise ValueError("not a tiny table")
        ko = int(self.key_off[v])
        out = []
        for s in range(int(self.cap[v])):
            key = int(self.keys[ko + s])
            out.append(None if key == EMPTY else (key, int(_rd(self.tv, v, s))))
        return out

    def home(self, b: int, v: int) -> int:
        return int(home_slot(b, int(self.cap[v])))

    def as_matrix(self) -> np.ndarray:
        """All affinities as an ``n x k`` array."""
        if self.mode == "none":
            return affinity_matrix(self.graph, self.partition.assignment, self.k)
        return _dense_matrix(self.tv, self.n, self.k)

    def memory_footprint(self) -> dict:
        descriptors = sum(a.nbytes for a in (self.width, self.kind, self.cap, self.off,
                                              self.key_off, self.locks))
        entries = int(self.cap.sum()) if self.mode != "none" else 0
        return {"entries": entries,
                "bytes": int(self.arena.nbytes + self.keys.nbytes + descriptors)}


def build_gain_table(g, p, mode: str = "sparse", workers: int = 1) -> GainTable:
    return GainTable(g, p, mode, workers)


def affinity_matrix(g, assignment, k: int) -> np.ndarray:
    """From-scratch ``n x k`` affinities (oracle)."""
    g = g.to_graph()
    out = np.zeros((g.n, k), np.int64)
    src = g.arc_sources()
    np.add.at(out, (src, np.asarray(assignment)[g.targets]), g.edge_weights)
    return out


def sparse_entry_bound(g, k: int) -> int:
    """``2 * sum_v min(deg(v), k)``."""
    return int(2 * np.minimum(g.degrees(), k).sum())
