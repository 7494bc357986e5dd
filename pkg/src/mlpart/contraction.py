"""One-pass cluster contraction writing the coarse CSR arrays directly.

Every worker aggregates the coarse neighborhoods of a range of clusters in
a small rating map and parks finished neighborhoods in a private buffer.
When the buffer fills up, a single atomic transaction on a packed
(arcs written, vertices finalized) counter reserves a slot range in the
shared output arrays, so coarse vertex IDs come out in finalization order
and no second copy of the coarse edges is ever built. Arc targets are
written as cluster IDs and remapped at the end.

Clusters with too many distinct neighbors are deferred and finalized one at
a time afterwards, with members split among the workers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from . import _lp
from ._adjacency import adjacency, degree, scratch_for
from ._atomics import atomic_cas, atomic_load
from ._ratingmap import new_map, rm_add, rm_clear, rm_fit
from .graph import EDGE, NODE, WEIGHT, Graph
from .memory import NULL_TRACKER, MemoryTracker
from .parallel import run_parallel, split_range
from .reserved import CapacityExceeded, ReservedBuffer

BUFFER_ARCS = 32768
_LOW = np.uint64(0xFFFFFFFF)
_SHIFT = np.uint64(32)


class ContractionError(RuntimeError):
    """Internal inconsistency during contraction."""


# --- dual counter ----------------------------------------------------------------


@njit(nogil=True, cache=True, inline="always")
def dual_fetch_add(cell, dd, ds):
    """Advance the packed pair by ``(dd, ds)``; returns the prior pair.

    Low 32 bits hold the arc count ``d``, high 32 bits the vertex count ``s``.
    Returns ``(-1, -1)`` if ``d`` would leave 32 bits.
    """
    while True:
        cur = atomic_load(cell, 0)
        d = cur & _LOW
        s = cur >> _SHIFT
        if d + np.uint64(dd) > _LOW or s + np.uint64(ds) > _LOW:
            return np.int64(-1), np.int64(-1)
        new = ((s + np.uint64(ds)) << _SHIFT) | (d + np.uint64(dd))
        if atomic_cas(cell, 0, cur, new) == cur:
            return np.int64(d), np.int64(s)


@njit(cache=True)
def _dual_fetch_add(cell, dd, ds):
    return dual_fetch_add(cell, dd, ds)


class DualCounter:
    """Packed ``(d, s)`` pair updated by one compare-and-swap."""

    def __init__(self, d: int = 0, s: int = 0):
        self.cell = np.array([(s << 32) | d], np.uint64)

    @property
    def value(self) -> tuple[int, int]:
        v = int(self.cell[0])
        return v & 0xFFFFFFFF, v >> 32

    def fetch_add(self, dd: int, ds: int) -> tuple[int, int]:
        d, s = _dual_fetch_add(self.cell, dd, ds)
        if d < 0:
            raise OverflowError("dual counter exceeds 32 bits")
        return int(d), int(s)


# --- neighborhood buffer ---------------------------------------------------------


@njit(nogil=True, cache=True)
def _flush(buf_t, buf_w, fill, nb_start, nb_cluster, nb_weight, nb, cell,
           e_out, w_out, p_out, cvw, mapping, log, log_count):
    """Publish ``nb`` buffered neighborhoods (``fill`` arcs) in one transaction."""
    if nb == 0:
        return 0
    d, s = dual_fetch_add(cell, fill, nb)
    if d < 0 or d + fill > len(e_out) or s + nb > len(cvw):
        return -1
    e_out[d : d + fill] = buf_t[:fill]
    w_out[d : d + fill] = buf_w[:fill]
    for j in range(nb):
        p_out[s + j] = d + nb_start[j]
        cvw[s + j] = nb_weight[j]
        mapping[nb_cluster[j]] = s + j
    if log_count[0] < log.shape[0]:
        log[log_count[0], 0] = d
        log[log_count[0], 1] = fill
        log_count[0] += 1
    return 0


class NeighborhoodBuffer:
    """Per-worker staging area for finished coarse neighborhoods."""

    def __init__(self, capacity: int = BUFFER_ARCS, max_neighborhoods: int | None = None):
        self.capacity = capacity
        slots = max_neighborhoods or capacity
        self.targets = np.empty(capacity, NODE)
        self.weights = np.empty(capacity, WEIGHT)
        self.starts = np.empty(slots, np.int64)
        self.clusters = np.empty(slots, NODE)
        self.vertex_weights = np.empty(slots, WEIGHT)
        self.fill = 0
        self.count = 0

    @property
    def arrays(self) -> tuple:
        return (self.targets, self.weights, self.starts, self.clusters, self.vertex_weights)

    @property
    def nbytes(self) -> int:
        return sum(a.nbytes for a in self.arrays)

    def fits(self, arcs: int) -> bool:
        return self.fill + arcs <= self.capacity and self.count < len(self.starts)

    def append(self, cluster: int, targets, weights, vertex_weight: int) -> None:
        k = len(targets)
        if not self.fits(k):
            raise CapacityExceeded("neighborhood buffer full; flush first")
        self.targets[self.fill : self.fill + k] = targets
        self.weights[self.fill : self.fill + k] = weights
        self.starts[self.count] = self.fill
        self.clusters[self.count] = cluster
        self.vertex_weights[self.count] = vertex_weight
        self.fill += k
        self.count += 1


@dataclass
class CoarseOutput:
    """Shared output of one contraction: reserved arrays plus the counter."""

    arcs: ReservedBuffer
    arc_weights: ReservedBuffer
    offsets: ReservedBuffer
    vertex_weights: ReservedBuffer
    mapping: np.ndarray
    counter: DualCounter

    @classmethod
    def reserve(cls, n: int, m2: int) -> "CoarseOutput":
        return cls(ReservedBuffer(m2, NODE), ReservedBuffer(m2, WEIGHT),
                   ReservedBuffer(n + 1, EDGE), ReservedBuffer(n, WEIGHT),
                   np.full(n, -1, NODE), DualCounter())

    def raw(self) -> tuple:
        return (self.counter.cell, self.arcs.array, self.arc_weights.array,
                self.offsets.array, self.vertex_weights.array, self.mapping)


def finalize_neighborhoods(buffer: NeighborhoodBuffer, out: CoarseOutput,
                           log: np.ndarray | None = None) -> None:
    """Flush ``buffer`` into ``out`` with one counter transaction."""
    log = np.empty((0, 2), np.int64) if log is None else log
    status = _flush(buffer.targets, buffer.weights, buffer.fill, buffer.starts,
                    buffer.clusters, buffer.vertex_weights, buffer.count, *out.raw(),
                    log, np.zeros(1, np.int64))
    if status < 0:
        raise CapacityExceeded("coarse arc storage exceeds its reserved bound")
    buffer.fill = 0
    buffer.count = 0


# --- kernels ---------------------------------------------------------------------


@njit(nogil=True, cache=True)
def bucket_clusters(labels, n):
    """Counting sort of vertices by cluster: ``(offsets, members)``."""
    off = np.zeros(n + 1, np.int32)
    for u in range(len(labels)):
        off[labels[u] + 1] += 1
    for a in range(n):
        off[a + 1] += off[a]
    members = np.empty(len(labels), np.int32)
    pos = off[:-1].copy()
    for u in range(len(labels)):
        a = labels[u]
        members[pos[a]] = u
        pos[a] += 1
    return off, members


@njit(nogil=True, cache=True, inline="always")
def _aggregate(gv, vweights, labels, a, members, lo, hi, keys, vals, used, state, st, sw):
    """Rate all cross-cluster arcs of members ``[lo, hi)``; -1 on overflow."""
    wsum = np.int64(0)
    arcs = 0
    for j in range(lo, hi):
        arcs += degree(gv, members[j])
    rm_fit(keys, state, min(arcs, len(used)))
    for j in range(lo, hi):
        u = members[j]
        wsum += vweights[u]
        t, w = adjacency(gv, u, st, sw)
        for i in range(len(t)):
            b = labels[t[i]]
            if b != a and rm_add(keys, vals, used, state, b, w[i]) < 0:
                return np.int64(-1)
    return wsum


@njit(nogil=True, cache=True)
def phase_one(gv, vweights, labels, off, members, c_lo, c_hi, keys, vals, used, state,
              st, sw, buf_t, buf_w, nb_start, nb_cluster, nb_weight, cell, e_out, w_out,
              p_out, cvw, mapping, bumped, log, log_count):
    """Cluster-parallel finalization of clusters ``[c_lo, c_hi)``.

    Returns the number of bumped clusters, or -1 if the output bound broke.
    """
    fill = 0
    nb = 0
    nbump = 0
    for a in range(c_lo, c_hi):
        lo = off[a]
        hi = off[a + 1]
        if lo == hi:
            continue
        wsum = _aggregate(gv, vweights, labels, a, members, lo, hi, keys, vals, used,
                          state, st, sw)
        if wsum < 0:
            rm_clear(keys, vals, used, state)
            bumped[nbump] = a
            nbump += 1
            continue
        size = state[0]
        if fill + size > len(buf_t) or nb == len(nb_cluster):
            if _flush(buf_t, buf_w, fill, nb_start, nb_cluster, nb_weight, nb, cell,
                      e_out, w_out, p_out, cvw, mapping, log, log_count) < 0:
                return -1
            fill = 0
            nb = 0
        nb_start[nb] = fill
        nb_cluster[nb] = a
        nb_weight[nb] = wsum
        nb += 1
        for i in range(size):
            h = used[i]
            buf_t[fill] = keys[h]
            buf_w[fill] = vals[h]
            fill += 1
        rm_clear(keys, vals, used, state)
    if _flush(buf_t, buf_w, fill, nb_start, nb_cluster, nb_weight, nb, cell, e_out,
              w_out, p_out, cvw, mapping, log, log_count) < 0:
        return -1
    return nbump


@njit(nogil=True, cache=True)
def accumulate_members(gv, labels, a, members, lo, hi, lstart, keys, vals, used, state,
                       st, sw, dense, lst, counts, widx):
    """Member-parallel share of a deferred cluster into the sparse array."""
    cnt = 0
    rm_fit(keys, state, len(used))
    for j in range(lo, hi):
        t, w = adjacency(gv, members[j], st, sw)
        for i in range(len(t)):
            b = labels[t[i]]
            if b == a:
                continue
            if rm_add(keys, vals, used, state, b, w[i]) < 0:
                cnt = _lp.flush_map(keys, vals, used, state, dense, lst, lstart, cnt)
                rm_add(keys, vals, used, state, b, w[i])
    counts[widx] = _lp.flush_map(keys, vals, used, state, dense, lst, lstart, cnt)


@njit(nogil=True, cache=True)
def write_deferred(a, wsum, dense, lst, starts, counts, cell, e_out, w_out, p_out, cvw,
                   mapping):
    """Sequential finalization: plain counter update, sparse array zeroed."""
    v = cell[0]
    d = np.int64(v & _LOW)
    s = np.int64(v >> _SHIFT)
    size = 0
    for t in range(len(counts)):
        size += counts[t]
    if d + size > len(e_out) or s >= len(cvw):
        return -1
    p_out[s] = d
    cvw[s] = wsum
    mapping[a] = s
    for t in range(len(starts)):
        for j in range(starts[t], starts[t] + counts[t]):
            c = lst[j]
            e_out[d] = c
            w_out[d] = dense[c]
            dense[c] = 0
            d += 1
    cell[0] = (np.uint64(s + 1) << _SHIFT) | np.uint64(d)
    return 0


@njit(nogil=True, cache=True)
def remap_range(arcs, mapping, lo, hi):
    for i in range(lo, hi):
        c = mapping[arcs[i]]
        if c < 0:
            return i
        arcs[i] = c
    return -1


@njit(nogil=True, cache=True)
def _member_degrees(gv, members, lo, hi):
    total = 0
    for j in range(lo, hi):
        total += degree(gv, members[j])
    return total


def remap_targets(arcs: np.ndarray, mapping: np.ndarray, workers: int = 1) -> None:
    """Replace every stored cluster ID by its coarse vertex ID, in place."""
    parts = split_range(0, len(arcs), workers)
    bad = [r for r in run_parallel(remap_range, [(arcs, mapping, lo, hi) for lo, hi in parts])
           if r >= 0]
    if bad:
        raise ContractionError(f"arc {bad[0]} points to an unmapped cluster")


# --- public API ------------------------------------------------------------------


@dataclass
class CoarseMapping:
    """``cluster_to_coarse[a]`` is the coarse vertex of cluster ``a`` (-1 if empty)."""

    cluster_to_coarse: np.ndarray
    fine_to_coarse: np.ndarray

    @property
    def n_coarse(self) -> int:
        return int(self.cluster_to_coarse.max()) + 1 if len(self.cluster_to_coarse) else 0


@dataclass
class ContractionStats:
    bumped: int = 0
    flushes: list | None = None
    committed_arcs: int = 0
    reserved_arcs: int = 0


def contract(g, clustering, *, workers: int = 1, t_bump: int = 10000,
             buffer_arcs: int = BUFFER_ARCS, tracker: MemoryTracker = NULL_TRACKER,
             stats: ContractionStats | None = None) -> tuple[Graph, CoarseMapping]:
    """Contract ``clustering`` (any labels in ``[0, n)``) into a coarse graph."""
    labels = np.ascontiguousarray(clustering.assignment
                                  if hasattr(clustering, "assignment") else clustering,
                                  dtype=NODE)
    n = g.n
    if len(labels) != n:
        raise ValueError("clustering size does not match the graph")
    if n and (labels.min() < 0 or labels.max() >= n):
        raise ValueError("cluster IDs must lie in [0, n)")
    gv = g.kernel_view()
    vw = np.ascontiguousarray(g.vertex_weights, dtype=WEIGHT)
    off, members = bucket_clusters(labels, n)
    tracker.track("contract.buckets", off)
    tracker.track("contract.buckets", members)

    out = CoarseOutput.reserve(n, 2 * g.m)
    tracker.track("contract.mapping", out.mapping)
    raw = out.raw()
    t_bump = max(2, t_bump)
    buffer_arcs = max(buffer_arcs, t_bump)
    p = workers
    maps = [new_map(2 * t_bump, occupancy_limit=t_bump) for _ in range(p)]
    buffers = [NeighborhoodBuffer(buffer_arcs) for _ in range(p)]
    handles = [tracker.add_bytes("contract.worker_buffers",
                                 buffers[t].nbytes + sum(a.nbytes for a in maps[t]))
               for t in range(p)]
    max_deg = g.max_degree() if g.is_compressed else None
    scratch = [scratch_for(gv, max_deg) for _ in range(p)]
    ranges = split_range(0, n, p)
    bumped = [np.empty(hi - lo, NODE) for lo, hi in ranges]
    log_cap = n + p if stats is not None else 0
    logs = [np.zeros((log_cap, 2), np.int64) for _ in range(p)]
    log_counts = [np.zeros(1, np.int64) for _ in range(p)]

    results = run_parallel(phase_one, [
        (gv, vw, labels, off, members, lo, hi, *maps[t], *scratch[t], *buffers[t].arrays,
         *raw, bumped[t], logs[t], log_counts[t])
        for t, (lo, hi) in enumerate(ranges)])
    if min(results) < 0:
        raise CapacityExceeded("coarse arc storage exceeds its reserved bound")
    deferred = np.concatenate([bumped[t][: results[t]] for t in range(p)])
    tracker.release(*handles)

    if len(deferred):
        _finalize_deferred(gv, vw, labels, off, members, deferred, maps, scratch, raw, n,
                           p, tracker)
    tracker.release(off, members)

    m2, n_coarse = out.counter.value
    out.arcs.commit(m2)
    out.arc_weights.commit(m2)
    out.vertex_weights.commit(n_coarse)
    out.offsets.commit(n_coarse + 1)
    out.offsets.array[n_coarse] = m2
    arcs = out.arcs.view()
    remap_targets(arcs, out.mapping, p)
    fine_to_coarse = tracker.track("contract.fine_to_coarse", out.mapping[labels])
    coarse = Graph(out.offsets.view(), arcs, out.arc_weights.view(), out.vertex_weights.view())
    if stats is not None:
        stats.bumped = len(deferred)
        stats.flushes = [tuple(r) for t in range(p) for r in logs[t][: log_counts[t][0]].tolist()]
        stats.committed_arcs = out.arcs.committed_length
        stats.reserved_arcs = out.arcs.capacity_upper_bound
    tracker.release(out.mapping)
    return coarse, CoarseMapping(out.mapping, fine_to_coarse)


def _finalize_deferred(gv, vw, labels, off, members, deferred, maps, scratch, raw, n, p,
                       tracker):
    # Longest member list sets the touched-list capacity.
    cap = max(int(_member_degrees(gv, members, off[a], off[a + 1])) for a in deferred.tolist())
    dense = tracker.zeros("contract.sparse_array", n, WEIGHT)
    lst = tracker.empty("contract.touched_lists", max(cap, 1), NODE)
    counts = np.zeros(p, np.int64)
    cell = raw[0]
    for a in deferred.tolist():
        lo, hi = int(off[a]), int(off[a + 1])
        parts = split_range(lo, hi, p)
        starts = np.zeros(p, np.int64)
        acc = 0
        for t, (plo, phi) in enumerate(parts):
            starts[t] = acc
            acc += int(_member_degrees(gv, members, plo, phi))
        counts[:] = 0
        run_parallel(accumulate_members, [
            (gv, labels, a, members, plo, phi, starts[t], *maps[t], *scratch[t], dense, lst,
             counts, t)
            for t, (plo, phi) in enumerate(parts)])
        wsum = int(vw[members[lo:hi]].sum())
        if write_deferred(a, wsum, dense, lst, starts, counts, cell, *raw[1:]) < 0:
            raise CapacityExceeded("coarse arc storage exceeds its reserved bound")
    tracker.release(dense, lst)


def aggregate_coarse_neighborhood(g, clustering, a: int, t_bump: int = 10000) -> dict[int, int]:
    """``{target cluster: summed weight}`` of arcs leaving cluster ``a``."""
    labels = np.ascontiguousarray(getattr(clustering, "assignment", clustering), dtype=NODE)
    gv = g.kernel_view()
    members = np.flatnonzero(labels == a).astype(NODE)
    st, sw = scratch_for(gv, g.max_degree() if g.is_compressed else None)
    keys, vals, used, state = new_map(2 * t_bump, occupancy_limit=t_bump)
    if _aggregate(gv, g.vertex_weights, labels, a, members, 0, len(members), keys, vals,
                  used, state, st, sw) >= 0:
        slots = used[: state[0]]
        return dict(zip(keys[slots].tolist(), vals[slots].tolist()))
    dense = np.zeros(g.n, WEIGHT)
    lst = np.empty(max(int(_member_degrees(gv, members, 0, len(members))), 1), NODE)
    counts = np.zeros(1, np.int64)
    rm_clear(keys, vals, used, state)
    accumulate_members(gv, labels, a, members, 0, len(members), 0, keys, vals, used, state,
                       st, sw, dense, lst, counts, 0)
    touched = lst[: counts[0]]
    return dict(zip(touched.tolist(), dense[touched].tolist()))


def contract_reference(g, labels) -> tuple[Graph, np.ndarray]:
    """Brute-force contraction with coarse IDs ordered by smallest member."""
    g = g.to_graph()
    labels = np.asarray(labels)
    firsts: dict[int, int] = {}
    for u, a in enumerate(labels.tolist()):
        firsts.setdefault(a, len(firsts))
    f2c = np.array([firsts[a] for a in labels.tolist()], dtype=NODE)
    nc = len(firsts)
    vwc = np.zeros(nc, WEIGHT)
    np.add.at(vwc, f2c, g.vertex_weights)
    edges: dict[tuple[int, int], int] = {}
    for u in range(g.n):
        for v, w in zip(g.targets[g.offsets[u]:g.offsets[u + 1]].tolist(),
                        g.edge_weights[g.offsets[u]:g.offsets[u + 1]].tolist()):
            a, b = int(f2c[u]), int(f2c[v])
            if a < b:
                edges[(a, b)] = edges.get((a, b), 0) + w
    pairs = list(edges)
    return Graph.from_edges(nc, pairs, [edges[e] for e in pairs], vwc), f2c
