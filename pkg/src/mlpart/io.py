"""Graph and partition files, and single-pass parallel compression on load."""

from __future__ import annotations

import enum
import logging
import queue
import struct
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from . import _codec
from .compression import (CHUNK_LENGTH, CHUNK_THRESHOLD, FORMAT_VERSION, CompressedGraph,
                          graph_size_bound, offsets_dtype)
from .graph import EDGE, NODE, WEIGHT, Graph, checked_sum
from .parallel import get_pool
from .reserved import CapacityExceeded, ReservedBuffer

log = logging.getLogger(__name__)

CSRBIN_MAGIC = b"MLPCSR\x00\x01"
CSRBIN_VERSION = 1


class GraphFormatError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


@dataclass
class LoadReport:
    self_loops_dropped: int = 0
    reverse_arcs_added: int = 0
    duplicates_merged: int = 0


# --- METIS text format -------------------------------------------------------------


def _metis_lines(path):
    with open(path, "r") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if raw.startswith("%"):
                continue
            yield lineno, raw


def _parse_header(lines) -> tuple[int, int, bool, bool]:
    for lineno, raw in lines:
        parts = raw.split()
        if not parts:
            continue
        try:
            nums = [int(x) for x in parts]
        except ValueError:
            raise GraphFormatError("header must be 'n m [fmt]'", lineno) from None
        if len(nums) < 2 or nums[0] < 0 or nums[1] < 0:
            raise GraphFormatError("header must be 'n m [fmt]'", lineno)
        fmt = parts[2] if len(parts) > 2 else "0"
        if fmt.lstrip("0") not in ("", "1", "10", "11"):
            raise GraphFormatError(f"unsupported fmt code {fmt}", lineno)
        fmt = fmt.zfill(3)
        return nums[0], nums[1], fmt[-2] == "1", fmt[-1] == "1"
    raise GraphFormatError("missing header", 1)


def _iter_metis_vertices(path):
    """Yield ``(n, m, vw, ew)`` first, then ``(vertex_weight, targets, weights)`` per vertex."""
    lines = _metis_lines(path)
    n, m, has_vw, has_ew = _parse_header(lines)
    yield n, m, has_vw, has_ew
    u = 0
    for lineno, raw in lines:
        if u >= n:
            if raw.strip():
                raise GraphFormatError("more vertex lines than announced", lineno)
            continue
        try:
            nums = np.array(raw.split(), dtype=np.int64)
        except ValueError:
            raise GraphFormatError("non-integer token", lineno) from None
        vw = 1
        if has_vw:
            if len(nums) == 0:
                raise GraphFormatError("missing vertex weight", lineno)
            vw, nums = int(nums[0]), nums[1:]
            if vw <= 0:
                raise GraphFormatError("vertex weights must be positive", lineno)
        if has_ew:
            if len(nums) % 2:
                raise GraphFormatError("neighbor without weight", lineno)
            targets, weights = nums[0::2], nums[1::2]
        else:
            targets, weights = nums, np.ones(len(nums), dtype=np.int64)
        if len(targets) and (targets.min() < 1 or targets.max() > n):
            raise GraphFormatError("neighbor id out of range", lineno)
        if len(weights) and weights.min() <= 0:
            raise GraphFormatError("edge weights must be positive", lineno)
        yield vw, targets - 1, weights
        u += 1
    if u < n:
        raise GraphFormatError(f"expected {n} vertex lines, found {u}")


def read_metis_graph(path, *, report: LoadReport | None = None) -> Graph:
    """Read a METIS graph (1-based ids, fmt codes 0/1/10/11) into CSR.

    Self-loops are dropped and missing reverse arcs added, both with a
    warning; the counts go into ``report`` when one is passed.
    """
    report = report if report is not None else LoadReport()
    it = _iter_metis_vertices(path)
    n, m_header, _, _ = next(it)
    srcs, dsts, wgts = [], [], []
    vweights = np.ones(n, dtype=WEIGHT)
    for u, (vw, targets, weights) in enumerate(it):
        vweights[u] = vw
        srcs.append(np.full(len(targets), u, dtype=np.int64))
        dsts.append(targets)
        wgts.append(weights)
    src = np.concatenate(srcs) if srcs else np.empty(0, np.int64)
    dst = np.concatenate(dsts) if dsts else np.empty(0, np.int64)
    wgt = np.concatenate(wgts) if wgts else np.empty(0, np.int64)
    loops = src == dst
    if loops.any():
        report.self_loops_dropped = int(loops.sum())
        log.warning("dropped %d self-loops", report.self_loops_dropped)
        src, dst, wgt = src[~loops], dst[~loops], wgt[~loops]
    # canonical undirected edges; each should be listed from both endpoints
    lo, hi = np.minimum(src, dst), np.maximum(src, dst)
    keys, inverse, counts = np.unique(lo * max(n, 1) + hi, return_inverse=True, return_counts=True)
    one_sided = int((counts == 1).sum())
    if one_sided:
        report.reverse_arcs_added = one_sided
        log.warning("added %d missing reverse arcs", one_sided)
    report.duplicates_merged = int((counts > 2).sum())
    weight = np.zeros(len(keys), dtype=np.int64)
    np.maximum.at(weight, inverse, wgt)
    lo, hi = keys // max(n, 1), keys % max(n, 1)
    g = Graph.from_edges(n, np.stack([lo, hi], axis=1), weight, vweights)
    if g.m != m_header:
        log.warning("header announces %d edges, read %d", m_header, g.m)
    return g


def write_metis_graph(path, g: Graph) -> None:
    has_vw = bool(np.any(g.vertex_weights != 1))
    has_ew = not g.has_unit_edge_weights
    fmt = ("1" if has_vw else "0") + ("1" if has_ew else "0")
    with open(path, "w") as fh:
        fh.write(f"{g.n} {g.m}" + (f" {fmt}" if fmt != "00" else "") + "\n")
        for u in range(g.n):
            t, w = g.neighbors(u)
            parts = [str(int(g.vertex_weights[u]))] if has_vw else []
            if has_ew:
                parts += [f"{a + 1} {b}" for a, b in zip(t.tolist(), w.tolist())]
            else:
                parts += [str(a + 1) for a in t.tolist()]
            fh.write(" ".join(parts) + "\n")


# --- binary CSR ----------------------------------------------------------------------


def write_csrbin(path, g: Graph) -> None:
    with open(path, "wb") as fh:
        fh.write(CSRBIN_MAGIC)
        fh.write(struct.pack("<QQQ", CSRBIN_VERSION, g.n, g.m))
        for arr in (g.offsets, g.targets, g.edge_weights, g.vertex_weights):
            fh.write(np.ascontiguousarray(arr, dtype="<i8").tobytes())


def read_csrbin(path) -> Graph:
    with open(path, "rb") as fh:
        magic = fh.read(len(CSRBIN_MAGIC))
        if magic != CSRBIN_MAGIC:
            raise GraphFormatError("not a binary CSR file")
        version, n, m = struct.unpack("<QQQ", fh.read(24))
        if version != CSRBIN_VERSION:
            raise GraphFormatError(f"unsupported binary CSR version {version}")

        def take(count):
            arr = np.fromfile(fh, dtype="<i8", count=count)
            if len(arr) != count:
                raise GraphFormatError("truncated binary CSR file")
            return arr

        offsets = take(n + 1).astype(EDGE)
        targets = take(2 * m).astype(NODE)
        weights = take(2 * m).astype(WEIGHT)
        vweights = take(n).astype(WEIGHT)
    return Graph(offsets, targets, weights, vweights)


def read_graph(path, fmt: str = "metis") -> Graph:
    if fmt == "metis":
        return read_metis_graph(path)
    if fmt == "csrbin":
        return read_csrbin(path)
    raise ValueError(f"unknown graph format {fmt!r}")


# --- partitions ------------------------------------------------------------------------


def write_partition(path, p) -> None:
    assignment = p.assignment if hasattr(p, "assignment") else np.asarray(p)
    with open(path, "w") as fh:
        if len(assignment):
            fh.write("\n".join(map(str, assignment.tolist())) + "\n")


def read_partition(path) -> np.ndarray:
    text = Path(path).read_text().split()
    return np.array([int(x) for x in text], dtype=NODE)


# --- single-pass parallel compression -------------------------------------------------------


class NeighborhoodStream:
    """Vertex-ordered source of neighborhoods that knows ``n`` and ``m`` up front.

    Iterating yields ``(vertex_weight, targets, weights)``; each neighborhood
    can be consumed exactly once, and ``consumed`` counts them.
    """

    def __init__(self, n: int, m: int, weighted: bool, iterator: Iterator):
        self.n = n
        self.m = m
        self.weighted = weighted
        self._it = iterator
        self.consumed = 0

    def __iter__(self):
        for item in self._it:
            self.consumed += 1
            yield item

    @classmethod
    def from_graph(cls, g: Graph) -> "NeighborhoodStream":
        def gen():
            for u in range(g.n):
                t, w = g.neighbors(u)
                yield int(g.vertex_weights[u]), t, w
        return cls(g.n, g.m, not g.has_unit_edge_weights, gen())

    @classmethod
    def from_metis(cls, path) -> "NeighborhoodStream":
        """Stream a METIS file; input must be symmetric (no repair in one pass)."""
        it = _iter_metis_vertices(path)
        n, m, _, has_ew = next(it)

        def gen():
            for u, (vw, targets, weights) in enumerate(it):
                keep = targets != u
                targets, weights = targets[keep], weights[keep]
                order = np.argsort(targets, kind="stable")
                yield vw, targets[order], weights[order]
        return cls(n, m, has_ew, gen())


class PacketState(enum.Enum):
    ENCODING = "encoding"
    AWAITING_PREDECESSOR = "awaitingPredecessor"
    PLACED = "placed"


@dataclass
class Packet:
    index: int
    first_vertex: int
    last_vertex: int                      # exclusive
    first_edge: int
    local_buffer: np.ndarray | None = None
    local_offsets: np.ndarray | None = None
    state: PacketState = PacketState.ENCODING
    placed_at: tuple[int, int] | None = None   # byte range in the blob

    @property
    def vertex_range(self) -> range:
        return range(self.first_vertex, self.last_vertex)


class StreamCompressor:
    """Compress a neighborhood stream in one pass with a pool of workers.

    The reader cuts the stream into packets of consecutive vertices with a
    similar number of arcs. Workers encode packets into local buffers, then
    wait until every preceding packet has claimed its byte range before
    claiming their own and copying into the shared reserved buffer.
    """

    def __init__(self, source: NeighborhoodStream, packet_edge_budget: int | None = None,
                 workers: int = 1, *, interval_encoding: bool = True,
                 chunk_threshold: int = CHUNK_THRESHOLD, chunk_length: int = CHUNK_LENGTH):
        self.source = source
        self.workers = max(1, workers)
        if packet_edge_budget is None:
            packet_edge_budget = max(4096, 2 * source.m // (8 * self.workers))
        self.packet_edge_budget = max(1, packet_edge_budget)
        self.interval_encoding = interval_encoding
        self.chunk_threshold = chunk_threshold
        self.chunk_length = chunk_length
        self.packets: list[Packet] = []
        self.buffer: ReservedBuffer | None = None
        self._placed_upto = 0
        self._end = 1
        self._failed = False
        self._cond = threading.Condition()

    def _packets(self):
        """Cut the stream into packets; runs on the reader (calling) thread."""
        vw_all = np.empty(self.source.n, dtype=WEIGHT)
        batch_t, batch_w, degs = [], [], []
        first_vertex, edges_in_batch, edge_id = 0, 0, 0
        u = 0
        for vw, targets, weights in self.source:
            vw_all[u] = vw
            batch_t.append(np.asarray(targets, dtype=NODE))
            batch_w.append(np.asarray(weights, dtype=WEIGHT))
            degs.append(len(targets))
            edges_in_batch += len(targets)
            u += 1
            if edges_in_batch >= self.packet_edge_budget:
                yield self._make_packet(first_vertex, u, edge_id, batch_t, batch_w, degs)
                edge_id += edges_in_batch
                first_vertex, edges_in_batch = u, 0
                batch_t, batch_w, degs = [], [], []
        if u != self.source.n:
            raise GraphFormatError(f"stream yielded {u} neighborhoods, expected {self.source.n}")
        if degs:
            yield self._make_packet(first_vertex, u, edge_id, batch_t, batch_w, degs)
        self.vertex_weights = vw_all

    def _make_packet(self, first, last, edge_id, batch_t, batch_w, degs):
        offsets = np.zeros(len(degs) + 1, dtype=np.int64)
        np.cumsum(degs, out=offsets[1:])
        packet = Packet(len(self.packets), first, last, edge_id)
        packet._data = (offsets, np.concatenate(batch_t), np.concatenate(batch_w))
        self.packets.append(packet)
        return packet

    def _encode_and_place(self, packet: Packet) -> None:
        offsets, targets, weights = packet._data
        weighted = self.source.weighted
        bound = int(sum(_codec.neighborhood_bound(int(d), weighted, self.chunk_threshold,
                                                  self.chunk_length)
                        for d in np.diff(offsets)))
        local = np.empty(bound, np.uint8)
        max_deg = int(np.diff(offsets).max()) if len(offsets) > 1 else 0
        scratch = np.empty(_codec.neighborhood_bound(max_deg, weighted, self.chunk_threshold,
                                                     self.chunk_length)
                           if max_deg > self.chunk_threshold else 0, np.uint8)
        local_offsets = np.empty(len(offsets) - 1, np.int64)
        size = _codec.encode_range(offsets, targets, weights, packet.first_vertex,
                                   packet.first_edge, weighted, self.interval_encoding,
                                   self.chunk_threshold, self.chunk_length, local, 0,
                                   local_offsets, scratch)
        packet.local_buffer = local[:size]
        packet.local_offsets = local_offsets
        del packet._data
        with self._cond:
            packet.state = PacketState.AWAITING_PREDECESSOR
            while self._placed_upto != packet.index:
                if self._failed:
                    raise RuntimeError("a preceding packet failed")
                self._cond.wait()
            start = self._end
            self._end += size
            if self._end > self.buffer.capacity:
                raise CapacityExceeded("compressed size exceeded its reserved upper bound")
            packet.placed_at = (start, self._end)
            packet.state = PacketState.PLACED
            self._placed_upto += 1
            self._cond.notify_all()
        # copying happens outside the critical section, into a disjoint range
        self.buffer.array[start:start + size] = packet.local_buffer
        self._noffsets[packet.first_vertex:packet.last_vertex] = local_offsets + start
        packet.local_buffer = None

    def _worker(self, packets: queue.Queue) -> None:
        while True:
            packet = packets.get()
            if packet is None:
                return
            try:
                self._encode_and_place(packet)
            except BaseException:
                with self._cond:
                    self._failed = True
                    self._cond.notify_all()
                raise

    def run(self) -> CompressedGraph:
        src = self.source
        bound = graph_size_bound(src.n, src.m, src.weighted, self.chunk_threshold,
                                 self.chunk_length)
        self.buffer = ReservedBuffer(bound)
        self.buffer.array[0] = FORMAT_VERSION
        self._noffsets = np.empty(src.n + 1, dtype=np.int64)
        if self.workers == 1:
            for packet in self._packets():
                self._encode_and_place(packet)
        else:
            # bounded hand-off keeps at most a few packets in flight
            packets: queue.Queue = queue.Queue(maxsize=2 * self.workers)
            pool = get_pool(self.workers)
            futures = [pool.submit(self._worker, packets) for _ in range(self.workers)]
            try:
                for packet in self._packets():
                    while not self._failed:
                        try:
                            packets.put(packet, timeout=0.05)
                            break
                        except queue.Full:
                            pass
                    if self._failed:
                        break
            finally:
                for _ in futures:
                    while True:
                        try:
                            packets.put(None, timeout=0.05)
                            break
                        except queue.Full:
                            if self._failed:
                                _drain(packets)
            for f in futures:
                f.result()
        self.buffer.commit(self._end)
        self._noffsets[src.n] = self._end
        return CompressedGraph(
            n=src.n, m=src.m, vertex_weights=self.vertex_weights,
            offsets=self._noffsets.astype(offsets_dtype(self._end)), blob=self.buffer.view(),
            total_vertex_weight=checked_sum(self.vertex_weights),
            has_edge_weights=src.weighted, interval_encoding=self.interval_encoding,
            chunk_threshold=self.chunk_threshold, chunk_length=self.chunk_length,
            _keepalive=self.buffer)


def _drain(q: queue.Queue) -> None:
    try:
        while True:
            q.get_nowait()
    except queue.Empty:
        pass


def stream_compress(source: NeighborhoodStream, packet_edge_budget: int | None = None,
                    workers: int = 1, **kwargs) -> CompressedGraph:
    return StreamCompressor(source, packet_edge_budget, workers, **kwargs).run()


def read_metis_compressed(path, workers: int = 1, **kwargs) -> CompressedGraph:
    return stream_compress(NeighborhoodStream.from_metis(path), workers=workers, **kwargs)
