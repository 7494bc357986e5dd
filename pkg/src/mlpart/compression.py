"""Byte-compressed adjacency with on-the-fly neighborhood decoding.

Neighbor lists are stored as gaps and intervals packed into VarInts (see
``_codec`` for the exact layout). Only the input graph is ever compressed;
coarse levels of the hierarchy stay in plain CSR.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np
from numba import njit

from . import _codec
from ._adjacency import max_degree as _max_degree
from .graph import EDGE, NODE, WEIGHT, Graph, StructuralError, checked_sum
from .parallel import run_parallel
from .reserved import CapacityExceeded, ReservedBuffer

FORMAT_VERSION = 1
CHUNK_THRESHOLD = 10_000
CHUNK_LENGTH = 1_000
MIN_INTERVAL_LEN = _codec.MIN_INTERVAL_LEN
#: bytes of fixed metadata (n, m, total weight, flags, chunk threshold, chunk length)
HEADER_BYTES = 48

_U64_LIMIT = 1 << 64


class MalformedEncodingError(ValueError):
    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message if offset is None else f"{message} (byte offset {offset})")
        self.offset = offset


# --- scalar codecs ---------------------------------------------------------------


def varint_encode(value: int) -> bytes:
    """Little-endian base-128 groups; the high bit marks a continuation."""
    if value < 0 or value >= _U64_LIMIT:
        raise ValueError("varint values must lie in [0, 2**64)")
    out = bytearray()
    while value >= 0x80:
        out.append((value & 0x7F) | 0x80)
        value >>= 7
    out.append(value)
    return bytes(out)


def varint_decode(data: bytes) -> tuple[int, int]:
    """Decode one VarInt from the start of ``data``; returns ``(value, consumed)``."""
    value = 0
    for i, byte in enumerate(data[: _codec.MAX_VARINT_BYTES]):
        if i == _codec.MAX_VARINT_BYTES - 1 and byte > 1:
            break
        value |= (byte & 0x7F) << (7 * i)
        if byte < 0x80:
            return value, i + 1
    raise MalformedEncodingError("varint continuation chain too long or truncated", 0)


def zigzag(value: int) -> int:
    return 2 * value if value >= 0 else -2 * value - 1


def unzigzag(value: int) -> int:
    return value >> 1 if value % 2 == 0 else -((value + 1) >> 1)


def encode_varint_array(values: np.ndarray) -> bytes:
    values = np.ascontiguousarray(values, dtype=np.uint64)
    buf = np.empty(len(values) * _codec.MAX_VARINT_BYTES, dtype=np.uint8)
    return buf[: _codec.encode_varints(values, buf)].tobytes()


def decode_varint_array(data: bytes, count: int) -> np.ndarray:
    buf = np.frombuffer(data, dtype=np.uint8)
    out = np.empty(count, dtype=np.uint64)
    got = _codec.decode_varints(buf, count, out)
    if got != count:
        raise MalformedEncodingError(f"only {got} of {count} varints decodable")
    return out


# --- neighborhoods -----------------------------------------------------------------


def encode_neighborhood(source: int, neighbors, *, first_edge_id: int = 0,
                        weighted: bool | None = None, interval_encoding: bool = True,
                        chunk_threshold: int = CHUNK_THRESHOLD,
                        chunk_length: int = CHUNK_LENGTH) -> bytes:
    """Encode one neighborhood given as sorted ``(target, weight)`` pairs."""
    targets = np.array([t for t, _ in neighbors], dtype=NODE)
    weights = np.array([w for _, w in neighbors], dtype=WEIGHT)
    if len(targets) > 1 and np.any(np.diff(targets.astype(np.int64)) <= 0):
        raise ValueError("neighbor targets must be strictly increasing")
    if np.any(targets == source):
        raise ValueError("self-loops cannot be encoded")
    if np.any(weights < 1):
        raise ValueError("edge weights must be positive")
    if weighted is None:
        weighted = bool(np.any(weights != 1))
    d = len(targets)
    buf = np.empty(_codec.neighborhood_bound(d, weighted, chunk_threshold, chunk_length), np.uint8)
    scratch = np.empty(buf.size if d > chunk_threshold else 0, np.uint8)
    end = _codec.encode_neighborhood(buf, 0, first_edge_id, targets, weights, 0, d, source,
                                     weighted, interval_encoding, chunk_threshold,
                                     chunk_length, scratch)
    return buf[:end].tobytes()


@dataclass
class CompressedGraph:
    n: int
    m: int
    vertex_weights: np.ndarray
    offsets: np.ndarray          # byte position of each neighborhood in ``blob``
    blob: np.ndarray             # version byte followed by the encoded neighborhoods
    total_vertex_weight: int
    has_edge_weights: bool
    interval_encoding: bool
    chunk_threshold: int = CHUNK_THRESHOLD
    chunk_length: int = CHUNK_LENGTH
    _max_degree: int | None = field(default=None, repr=False)
    _keepalive: object = field(default=None, repr=False)

    is_compressed = True

    @property
    def flags(self) -> int:
        return ((_codec.FLAG_WEIGHTED if self.has_edge_weights else 0)
                | (_codec.FLAG_INTERVALS if self.interval_encoding else 0))

    def kernel_view(self) -> tuple:
        return (1, np.empty(0, EDGE), np.empty(0, NODE), np.empty(0, WEIGHT), self.blob,
                self.offsets, 2 * self.m, self.flags, self.chunk_threshold,
                self.chunk_length, self.n)

    @property
    def max_vertex_weight(self) -> int:
        return int(self.vertex_weights.max()) if self.n else 0

    def max_degree(self) -> int:
        if self._max_degree is None:
            self._max_degree = int(_max_degree(self.kernel_view())) if self.n else 0
        return self._max_degree

    def first_edge_id(self, u: int) -> int:
        if u == self.n:
            return 2 * self.m
        value, _ = varint_decode(self.blob[int(self.offsets[u]): int(self.offsets[u]) + 10].tobytes())
        return value

    def degree(self, u: int) -> int:
        return self.first_edge_id(u + 1) - self.first_edge_id(u)

    def degrees(self) -> np.ndarray:
        return _degrees(self.blob, self.offsets, self.n, 2 * self.m)

    def neighbors(self, u: int) -> tuple[np.ndarray, np.ndarray]:
        d = self.degree(u)
        out_t = np.empty(d, NODE)
        out_w = np.empty(d, WEIGHT)
        got = _codec.decode_neighborhood(self.blob, self.offsets, u, self.n, 2 * self.m,
                                         self.flags, self.chunk_threshold, self.chunk_length,
                                         out_t, out_w)
        if got < 0:
            raise MalformedEncodingError(f"neighborhood of vertex {u} is corrupt", -got - 2)
        return out_t, out_w

    def decode_neighborhood(self, u: int, visitor: Callable[[int, int, int], None]) -> None:
        """Call ``visitor(edge_id, target, weight)`` for each neighbor, in target order."""
        if not 0 <= u < self.n:
            raise IndexError(u)
        first = self.first_edge_id(u)
        targets, weights = self.neighbors(u)
        for i, (t, w) in enumerate(zip(targets.tolist(), weights.tolist())):
            visitor(first + i, t, w)

    def decode_neighborhood_parallel(self, u: int, visitor, workers: int = 4) -> None:
        """Decode the chunks of a high-degree neighborhood on independent workers."""
        d = self.degree(u)
        if d <= self.chunk_threshold:
            raise ValueError(f"vertex {u} has degree {d}, not above the chunk threshold")
        first = self.first_edge_id(u)
        chunks = (d + self.chunk_length - 1) // self.chunk_length
        positions = np.empty(chunks, np.int64)
        _codec.chunk_directory(self.blob, self.offsets, u, positions)
        workers = max(1, min(workers, chunks))
        bounds = [chunks * i // workers for i in range(workers + 1)]

        def work(c_lo, c_hi):
            cnt = min(d, c_hi * self.chunk_length) - c_lo * self.chunk_length
            out_t = np.empty(cnt, NODE)
            out_w = np.empty(cnt, WEIGHT)
            err = _decode_chunks(self.blob, positions, c_lo, c_hi, u, d, self.flags,
                                 self.chunk_length, out_t, out_w)
            if err >= 0:
                raise MalformedEncodingError(f"chunk of vertex {u} is corrupt", int(err))
            base = first + c_lo * self.chunk_length
            for i, (t, w) in enumerate(zip(out_t.tolist(), out_w.tolist())):
                visitor(base + i, t, w)

        run_parallel(work, [(bounds[i], bounds[i + 1]) for i in range(workers)])

    def to_graph(self) -> Graph:
        """Decompress into CSR (test and tooling use only)."""
        offsets = np.zeros(self.n + 1, dtype=EDGE)
        np.cumsum(self.degrees(), out=offsets[1:])
        targets = np.empty(2 * self.m, NODE)
        weights = np.empty(2 * self.m, WEIGHT)
        err = _decode_all(self.blob, self.offsets, self.n, 2 * self.m, self.flags,
                          self.chunk_threshold, self.chunk_length, offsets, targets, weights)
        if err >= 0:
            raise MalformedEncodingError("corrupt neighborhood", int(err))
        return Graph(offsets, targets, weights, self.vertex_weights.copy())

    def nbytes(self) -> int:
        return int(self.blob.nbytes + self.offsets.nbytes + HEADER_BYTES)


@njit(nogil=True, cache=True)
def _degrees(blob, noffsets, n, m2):
    out = np.empty(n, np.int64)
    prev = _codec.read_first_edge(blob, noffsets, 0, n, m2) if n else 0
    for u in range(n):
        nxt = _codec.read_first_edge(blob, noffsets, u + 1, n, m2)
        out[u] = nxt - prev
        prev = nxt
    return out


@njit(nogil=True, cache=True)
def _decode_all(blob, noffsets, n, m2, flags, threshold, chunk_len, offsets, out_t, out_w):
    for u in range(n):
        a = offsets[u]
        b = offsets[u + 1]
        d = _codec.decode_neighborhood(blob, noffsets, u, n, m2, flags, threshold, chunk_len,
                                       out_t[a:b], out_w[a:b])
        if d < 0:
            return -d - 2
    return -1


@njit(nogil=True, cache=True)
def _decode_chunks(blob, positions, c_lo, c_hi, u, d, flags, chunk_len, out_t, out_w):
    weighted = (flags & _codec.FLAG_WEIGHTED) != 0
    intervals = (flags & _codec.FLAG_INTERVALS) != 0
    at = 0
    for c in range(c_lo, c_hi):
        cnt = min(chunk_len, d - c * chunk_len)
        end = _codec.decode_segment(blob, positions[c], cnt, u, weighted, intervals,
                                    out_t, out_w, at)
        if end == _codec.ERR:
            return positions[c]
        at += cnt
    return -1


def _sorted_adjacency(g: Graph) -> Graph:
    if g.m == 0:
        return g
    src = g.arc_sources()
    t = g.targets.astype(np.int64)
    inner = np.ones(len(t), dtype=bool)
    inner[1:] = src[1:] == src[:-1]
    if np.all(np.diff(t)[inner[1:]] > 0):
        return g
    order = np.lexsort((t, src))
    return Graph(g.offsets, g.targets[order], g.edge_weights[order], g.vertex_weights)


def graph_size_bound(n: int, m: int, weighted: bool, threshold: int = CHUNK_THRESHOLD,
                     chunk_length: int = CHUNK_LENGTH) -> int:
    """Upper bound on the blob size, computable from ``n`` and ``m`` alone."""
    per_arc = _codec.MAX_VARINT_BYTES * (2 if weighted else 1)
    chunks = 2 * m // chunk_length + n
    return 1 + n * 2 * _codec.MAX_VARINT_BYTES + 2 * m * per_arc + chunks * 2 * _codec.MAX_VARINT_BYTES


def offsets_dtype(blob_bytes: int):
    return np.uint32 if blob_bytes < (1 << 32) else np.uint64


def compress_graph(g: Graph, *, interval_encoding: bool = True, weighted: bool | None = None,
                   chunk_threshold: int = CHUNK_THRESHOLD,
                   chunk_length: int = CHUNK_LENGTH) -> CompressedGraph:
    """Sequential single-pass compression of an in-memory CSR graph."""
    if weighted is None:
        weighted = not g.has_unit_edge_weights
    elif not weighted and not g.has_unit_edge_weights:
        raise StructuralError("cannot drop non-unit edge weights")
    g = _sorted_adjacency(g)
    bound = graph_size_bound(g.n, g.m, weighted, chunk_threshold, chunk_length)
    reserved = ReservedBuffer(bound)
    buf = reserved.array
    buf[0] = FORMAT_VERSION
    local = np.empty(g.n + 1, np.int64)
    max_deg = g.max_degree()
    scratch = np.empty(_codec.neighborhood_bound(max_deg, weighted, chunk_threshold, chunk_length)
                       if max_deg > chunk_threshold else 0, np.uint8)
    end = _codec.encode_range(g.offsets, g.targets, g.edge_weights, 0, 0, weighted,
                              interval_encoding, chunk_threshold, chunk_length, buf, 1,
                              local, scratch)
    if end > bound:
        raise CapacityExceeded("compressed size exceeded its upper bound")
    reserved.commit(end)
    local[g.n] = end
    return CompressedGraph(
        n=g.n, m=g.m, vertex_weights=g.vertex_weights.copy(),
        offsets=local.astype(offsets_dtype(end)), blob=reserved.view(),
        total_vertex_weight=g.total_vertex_weight, has_edge_weights=bool(weighted),
        interval_encoding=interval_encoding, chunk_threshold=chunk_threshold,
        chunk_length=chunk_length, _max_degree=max_deg, _keepalive=reserved)


def csr_reference_bytes(n: int, m: int) -> int:
    """Size of a CSR graph with 64-bit offsets, arc targets and arc weights."""
    return 8 * (n + 1) + 8 * 2 * m + 8 * 2 * m


def compression_ratio(g, cg: CompressedGraph) -> Fraction:
    return Fraction(csr_reference_bytes(g.n, g.m), cg.nbytes())


def check_version(cg: CompressedGraph) -> None:
    if cg.blob.size == 0 or cg.blob[0] != FORMAT_VERSION:
        raise MalformedEncodingError("unknown compressed format version", 0)


__all__ = [
    "CHUNK_LENGTH", "CHUNK_THRESHOLD", "CompressedGraph", "FORMAT_VERSION",
    "MalformedEncodingError", "compress_graph", "compression_ratio", "encode_neighborhood",
    "varint_decode", "varint_encode", "zigzag", "unzigzag", "checked_sum",
]
