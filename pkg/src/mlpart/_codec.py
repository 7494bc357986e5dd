"""Numba kernels for the neighborhood byte format.

Neighborhood layout (all integers are little-endian base-128 VarInts):

    firstEdgeId
    if degree > chunk_threshold:
        chunkCount, chunkByteLength * chunkCount, chunk * chunkCount
    else:
        segment

    segment := [intervalCount]              (only with interval encoding)
               interval * intervalCount     (start code, length - 3, weights)
               residual * rest              (gap code, weight)

The first interval start and the first residual are zigzag deltas from the
source vertex; later interval starts are gaps past the previous interval's
end, later residuals store ``gap - 1``. Weights (weighted graphs only) form
one chain in encoding order: the first is absolute, the rest are zigzag
deltas. Chunks are self-contained segments of ``chunk_length`` neighbors.
"""

import numpy as np
from numba import njit

FLAG_WEIGHTED = 1
FLAG_INTERVALS = 2
MIN_INTERVAL_LEN = 3
MAX_VARINT_BYTES = 10

ERR = -1


@njit(nogil=True, cache=True, inline="always")
def zigzag_encode(v):
    v = np.int64(v)
    return np.uint64((v << 1) ^ (v >> 63))


@njit(nogil=True, cache=True, inline="always")
def zigzag_decode(z):
    z = np.uint64(z)
    return np.int64(z >> np.uint64(1)) ^ -np.int64(z & np.uint64(1))


@njit(nogil=True, cache=True, inline="always")
def write_varint(buf, pos, value):
    v = np.uint64(value)
    while v >= np.uint64(0x80):
        buf[pos] = np.uint8((v & np.uint64(0x7F)) | np.uint64(0x80))
        pos += 1
        v >>= np.uint64(7)
    buf[pos] = np.uint8(v)
    return pos + 1


@njit(nogil=True, cache=True, inline="always")
def varint_size(value):
    v = np.uint64(value)
    size = 1
    while v >= np.uint64(0x80):
        v >>= np.uint64(7)
        size += 1
    return size


@njit(nogil=True, cache=True, inline="always")
def read_varint(buf, pos):
    """Returns ``(value, next_pos)``; ``next_pos == ERR`` marks malformed input."""
    result = np.uint64(0)
    shift = np.uint64(0)
    n = len(buf)
    for i in range(MAX_VARINT_BYTES):
        if pos + i >= n:
            return np.uint64(0), ERR
        b = np.uint64(buf[pos + i])
        if i == MAX_VARINT_BYTES - 1 and b > np.uint64(1):
            return np.uint64(0), ERR
        result |= (b & np.uint64(0x7F)) << shift
        if b < np.uint64(0x80):
            return result, pos + i + 1
        shift += np.uint64(7)
    return np.uint64(0), ERR


@njit(nogil=True, cache=True)
def encode_varints(values, buf):
    pos = 0
    for i in range(len(values)):
        pos = write_varint(buf, pos, values[i])
    return pos


@njit(nogil=True, cache=True)
def decode_varints(buf, count, out):
    pos = 0
    for i in range(count):
        v, pos = read_varint(buf, pos)
        if pos == ERR:
            return i
        out[i] = v
    return count


# --- segments -------------------------------------------------------------------


@njit(nogil=True, cache=True, inline="always")
def _run_length(t, i, hi):
    r = 1
    while i + r < hi and t[i + r] == t[i] + r:
        r += 1
    return r


@njit(nogil=True, cache=True, inline="always")
def _write_weight(buf, pos, w, prev, first):
    if first:
        return write_varint(buf, pos, w)
    return write_varint(buf, pos, zigzag_encode(np.int64(w) - np.int64(prev)))


@njit(nogil=True, cache=True)
def encode_segment(buf, pos, t, w, lo, hi, source, weighted, intervals):
    """Encode sorted neighbors ``t[lo:hi]`` (weights ``w``) starting at ``pos``."""
    first_w = True
    prev_w = np.int64(0)
    if intervals:
        count = 0
        i = lo
        while i < hi:
            r = _run_length(t, i, hi)
            if r >= MIN_INTERVAL_LEN:
                count += 1
            i += r
        pos = write_varint(buf, pos, count)
        i = lo
        prev_end = np.int64(-1)
        first_iv = True
        while i < hi:
            r = _run_length(t, i, hi)
            if r >= MIN_INTERVAL_LEN:
                start = np.int64(t[i])
                if first_iv:
                    pos = write_varint(buf, pos, zigzag_encode(start - source))
                    first_iv = False
                else:
                    pos = write_varint(buf, pos, start - prev_end - 2)
                pos = write_varint(buf, pos, r - MIN_INTERVAL_LEN)
                if weighted:
                    for j in range(i, i + r):
                        pos = _write_weight(buf, pos, w[j], prev_w, first_w)
                        first_w = False
                        prev_w = w[j]
                prev_end = start + r - 1
            i += r
    i = lo
    first_res = True
    prev_t = np.int64(0)
    while i < hi:
        r = _run_length(t, i, hi) if intervals else 1
        if r >= MIN_INTERVAL_LEN:
            i += r
            continue
        for j in range(i, i + r):
            tj = np.int64(t[j])
            if first_res:
                pos = write_varint(buf, pos, zigzag_encode(tj - source))
                first_res = False
            else:
                pos = write_varint(buf, pos, tj - prev_t - 1)
            prev_t = tj
            if weighted:
                pos = _write_weight(buf, pos, w[j], prev_w, first_w)
                first_w = False
                prev_w = w[j]
        i += r
    return pos


@njit(nogil=True, cache=True)
def decode_segment(buf, pos, count, source, weighted, intervals, out_t, out_w, out_at):
    """Decode ``count`` neighbors in increasing order into ``out_*[out_at:]``.

    Returns the byte position after the segment, or ERR.
    """
    if count == 0:
        return pos
    n_iv = 0
    iv_elems = 0
    last_w = np.int64(0)
    ipos = pos
    rpos = pos
    if intervals:
        v, pos = read_varint(buf, pos)
        if pos == ERR:
            return ERR
        n_iv = np.int64(v)
        ipos = pos
        # skip over the interval section to find where residuals begin
        p = pos
        have_w = False
        for _ in range(n_iv):
            v, p = read_varint(buf, p)
            if p == ERR:
                return ERR
            v, p = read_varint(buf, p)
            if p == ERR:
                return ERR
            ln = np.int64(v) + MIN_INTERVAL_LEN
            iv_elems += ln
            if iv_elems > count:
                return ERR
            if weighted:
                for _e in range(ln):
                    v, p = read_varint(buf, p)
                    if p == ERR:
                        return ERR
                    if have_w:
                        last_w += zigzag_decode(v)
                    else:
                        last_w = np.int64(v)
                        have_w = True
        rpos = p
    n_res = count - iv_elems
    # interval cursor
    iv_done = 0
    iv_cur = np.int64(0)
    iv_rem = 0
    iv_prev_end = np.int64(0)
    iv_w = np.int64(0)
    iv_have_w = False
    # residual cursor
    res_done = 0
    res_cur = np.int64(0)
    res_loaded = False
    res_prev = np.int64(0)
    res_w = last_w
    res_have_w = iv_elems > 0
    end_pos = rpos
    k = out_at
    for _ in range(count):
        if iv_rem == 0 and iv_done < n_iv:
            v, ipos = read_varint(buf, ipos)
            if ipos == ERR:
                return ERR
            if iv_done == 0:
                iv_cur = source + zigzag_decode(v)
            else:
                iv_cur = iv_prev_end + 2 + np.int64(v)
            v, ipos = read_varint(buf, ipos)
            if ipos == ERR:
                return ERR
            iv_rem = np.int64(v) + MIN_INTERVAL_LEN
            iv_prev_end = iv_cur + iv_rem - 1
            iv_done += 1
        if not res_loaded and res_done < n_res:
            v, rpos = read_varint(buf, rpos)
            if rpos == ERR:
                return ERR
            if res_done == 0:
                res_cur = source + zigzag_decode(v)
            else:
                res_cur = res_prev + 1 + np.int64(v)
            res_loaded = True
        take_iv = iv_rem > 0 and (not res_loaded or iv_cur < res_cur)
        if take_iv:
            out_t[k] = iv_cur
            if weighted:
                v, ipos = read_varint(buf, ipos)
                if ipos == ERR:
                    return ERR
                if iv_have_w:
                    iv_w += zigzag_decode(v)
                else:
                    iv_w = np.int64(v)
                    iv_have_w = True
                out_w[k] = iv_w
            else:
                out_w[k] = 1
            iv_cur += 1
            iv_rem -= 1
        elif res_loaded:
            out_t[k] = res_cur
            if weighted:
                v, rpos = read_varint(buf, rpos)
                if rpos == ERR:
                    return ERR
                if res_have_w:
                    res_w += zigzag_decode(v)
                else:
                    res_w = np.int64(v)
                    res_have_w = True
                out_w[k] = res_w
            else:
                out_w[k] = 1
            res_prev = res_cur
            res_loaded = False
            res_done += 1
            end_pos = rpos
        else:
            return ERR
        k += 1
    if n_res == 0:
        end_pos = ipos
    return end_pos


# --- whole neighborhoods --------------------------------------------------------


@njit(nogil=True, cache=True)
def segment_bound(d, weighted):
    return MAX_VARINT_BYTES * (1 + d * (2 if weighted else 1))


@njit(nogil=True, cache=True)
def neighborhood_bound(d, weighted, threshold, chunk_len):
    bound = MAX_VARINT_BYTES
    if d > threshold:
        chunks = (d + chunk_len - 1) // chunk_len
        bound += MAX_VARINT_BYTES * (1 + chunks)
        bound += chunks * segment_bound(0, weighted) + segment_bound(d, weighted) - segment_bound(0, weighted)
    else:
        bound += segment_bound(d, weighted)
    return bound


@njit(nogil=True, cache=True)
def encode_neighborhood(buf, pos, first_edge, t, w, lo, hi, source, weighted, intervals,
                        threshold, chunk_len, scratch):
    """Encode arcs ``lo:hi`` of ``t``/``w`` as one neighborhood; ``scratch`` is only
    touched for chunked (high-degree) neighborhoods and must hold their encoding."""
    pos = write_varint(buf, pos, first_edge)
    d = hi - lo
    if d == 0:
        return pos
    if d <= threshold:
        return encode_segment(buf, pos, t, w, lo, hi, source, weighted, intervals)
    chunks = (d + chunk_len - 1) // chunk_len
    pos = write_varint(buf, pos, chunks)
    spos = 0
    starts = np.empty(chunks + 1, dtype=np.int64)
    for c in range(chunks):
        starts[c] = spos
        a = lo + c * chunk_len
        b = min(hi, a + chunk_len)
        spos = encode_segment(scratch, spos, t, w, a, b, source, weighted, intervals)
    starts[chunks] = spos
    for c in range(chunks):
        pos = write_varint(buf, pos, starts[c + 1] - starts[c])
    for i in range(spos):
        buf[pos + i] = scratch[i]
    return pos + spos


@njit(nogil=True, cache=True)
def read_first_edge(blob, noffsets, u, n, m2):
    if u >= n:
        return np.int64(m2)
    v, p = read_varint(blob, np.int64(noffsets[u]))
    if p == ERR:
        return np.int64(-1)
    return np.int64(v)


@njit(nogil=True, cache=True)
def decode_neighborhood(blob, noffsets, u, n, m2, flags, threshold, chunk_len, out_t, out_w):
    """Decode all neighbors of ``u`` into ``out_*``; returns degree, or ERR-coded
    negative ``-(byte_offset + 2)`` on malformed input."""
    weighted = (flags & FLAG_WEIGHTED) != 0
    intervals = (flags & FLAG_INTERVALS) != 0
    start = np.int64(noffsets[u])
    v, pos = read_varint(blob, start)
    if pos == ERR:
        return -(start + 2)
    first = np.int64(v)
    nxt = read_first_edge(blob, noffsets, u + 1, n, m2)
    if nxt < first:
        return -(start + 2)
    d = nxt - first
    if d == 0:
        return 0
    if d <= threshold:
        end = decode_segment(blob, pos, d, u, weighted, intervals, out_t, out_w, 0)
        if end == ERR:
            return -(pos + 2)
        return d
    v, pos = read_varint(blob, pos)
    if pos == ERR:
        return -(start + 2)
    chunks = np.int64(v)
    if chunks != (d + chunk_len - 1) // chunk_len:
        return -(start + 2)
    cpos = pos
    for _ in range(chunks):
        _, cpos = read_varint(blob, cpos)
        if cpos == ERR:
            return -(pos + 2)
    lpos = pos
    for c in range(chunks):
        ln, lpos = read_varint(blob, lpos)
        cnt = min(chunk_len, d - c * chunk_len)
        end = decode_segment(blob, cpos, cnt, u, weighted, intervals, out_t, out_w, c * chunk_len)
        if end == ERR or end != cpos + np.int64(ln):
            return -(cpos + 2)
        cpos = end
    return d


@njit(nogil=True, cache=True)
def chunk_directory(blob, noffsets, u, out_pos):
    """Byte start of every chunk of a chunked neighborhood; returns chunk count."""
    pos = np.int64(noffsets[u])
    _, pos = read_varint(blob, pos)
    v, pos = read_varint(blob, pos)
    chunks = np.int64(v)
    cpos = pos
    for _ in range(chunks):
        _, cpos = read_varint(blob, cpos)
    for c in range(chunks):
        ln, pos = read_varint(blob, pos)
        out_pos[c] = cpos
        cpos += np.int64(ln)
    return chunks


@njit(nogil=True, cache=True)
def encode_range(offsets, targets, weights, source_base, edge_base, weighted, intervals,
                 threshold, chunk_len, buf, pos, local_offsets, scratch):
    """Encode ``len(offsets) - 1`` consecutive neighborhoods, vertex ids starting at
    ``source_base`` and edge ids at ``edge_base``; records each start position."""
    edge = edge_base
    for i in range(len(offsets) - 1):
        local_offsets[i] = pos
        lo = offsets[i]
        hi = offsets[i + 1]
        pos = encode_neighborhood(buf, pos, edge, targets, weights, lo, hi, source_base + i,
                                  weighted, intervals, threshold, chunk_len, scratch)
        edge += hi - lo
    return pos
