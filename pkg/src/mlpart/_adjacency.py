"""Representation-agnostic neighborhood access for numba kernels.

Kernels receive a graph as the flat tuple built by ``kernel_view()``:

    (kind, offsets, targets, weights, blob, noffsets, m2, flags,
     chunk_threshold, chunk_length, n)

``kind == 0`` is CSR, ``kind == 1`` is the byte-compressed form, in which
case neighborhoods are decoded into caller-provided scratch arrays.
"""

import numpy as np
from numba import njit

from ._codec import decode_neighborhood, read_first_edge


@njit(nogil=True, cache=True, inline="always")
def n_of(gv):
    return gv[10]


@njit(nogil=True, cache=True, inline="always")
def degree(gv, u):
    if gv[0] == 0:
        return gv[1][u + 1] - gv[1][u]
    a = read_first_edge(gv[4], gv[5], u, gv[10], gv[6])
    b = read_first_edge(gv[4], gv[5], u + 1, gv[10], gv[6])
    return b - a


@njit(nogil=True, cache=True, inline="always")
def adjacency(gv, u, scratch_t, scratch_w):
    """``(targets, weights)`` of ``u``; views into the graph or into scratch."""
    if gv[0] == 0:
        a = gv[1][u]
        b = gv[1][u + 1]
        return gv[2][a:b], gv[3][a:b]
    d = decode_neighborhood(gv[4], gv[5], u, gv[10], gv[6], gv[7], gv[8], gv[9],
                            scratch_t, scratch_w)
    if d < 0:
        raise ValueError("malformed compressed neighborhood")
    return scratch_t[:d], scratch_w[:d]


@njit(nogil=True, cache=True)
def max_degree(gv):
    best = 0
    for u in range(gv[10]):
        d = degree(gv, u)
        if d > best:
            best = d
    return best


def scratch_for(gv, max_deg=None):
    """Scratch buffers large enough to hold any decoded neighborhood."""
    if gv[0] == 0:
        return np.empty(0, np.int32), np.empty(0, np.int64)
    if max_deg is None:
        max_deg = max_degree(gv)
    return np.empty(max_deg, np.int32), np.empty(max_deg, np.int64)


@njit(nogil=True, cache=True)
def cut_kernel(gv, assignment):
    st = np.empty(0, np.int32)
    sw = np.empty(0, np.int64)
    if gv[0] == 1:
        st = np.empty(max_degree(gv), np.int32)
        sw = np.empty(len(st), np.int64)
    total = np.int64(0)
    for u in range(gv[10]):
        t, w = adjacency(gv, u, st, sw)
        bu = assignment[u]
        for i in range(len(t)):
            if assignment[t[i]] != bu:
                total += w[i]
    return total
