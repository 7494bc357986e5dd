import numpy as np
import pytest

from mlpart.compression import compress_graph
from mlpart.graph import Graph, validate_graph
from mlpart.io import (GraphFormatError, LoadReport, NeighborhoodStream, PacketState,
                       StreamCompressor, read_csrbin, read_graph, read_metis_compressed,
                       read_metis_graph, read_partition, stream_compress, write_csrbin,
                       write_metis_graph, write_partition)
from mlpart.reserved import CapacityExceeded, ReservedBuffer
from mlpart.testing import random_graph


def _write(tmp_path, text, name="g.metis"):
    p = tmp_path / name
    p.write_text(text)
    return p


def _same(a, b):
    return all(np.array_equal(x, y) for x, y in [(a.offsets, b.offsets), (a.targets, b.targets),
                                                (a.edge_weights, b.edge_weights),
                                                (a.vertex_weights, b.vertex_weights)])


class TestMetis:
    def test_triangle(self, tmp_path):
        g = read_metis_graph(_write(tmp_path, "3 3\n2 3\n1 3\n1 2\n"))
        assert (g.n, g.m) == (3, 3) and validate_graph(g) == []

    def test_empty(self, tmp_path):
        g = read_metis_graph(_write(tmp_path, "0 0\n"))
        assert (g.n, g.m) == (0, 0)

    def test_weighted_roundtrip(self, tmp_path, rng):
        for i in range(10):
            g = random_graph(rng, 60, max_weight=50, vertex_weights=bool(i % 2))
            p = tmp_path / f"w{i}.metis"
            write_metis_graph(p, g)
            assert _same(read_graph(p), g)

    def test_fmt_001(self, tmp_path):
        g = read_metis_graph(_write(tmp_path, "2 1 001\n2 7\n1 7\n"))
        assert g.edge_weights.tolist() == [7, 7]

    def test_asymmetry_repaired(self, tmp_path):
        rep = LoadReport()
        g = read_metis_graph(_write(tmp_path, "3 2\n2 3\n\n1\n"), report=rep)
        assert validate_graph(g) == [] and g.m == 2 and rep.reverse_arcs_added == 1

    def test_self_loop_dropped(self, tmp_path):
        rep = LoadReport()
        g = read_metis_graph(_write(tmp_path, "2 1\n1 2\n1\n"), report=rep)
        assert g.m == 1 and rep.self_loops_dropped == 1

    @pytest.mark.parametrize("text,line", [("3 3\n2 x\n", 2), ("2 1\n3\n1\n", 2),
                                           ("oops\n", 1), ("2 1 001\n2\n1 1\n", 2)])
    def test_parse_errors_carry_line(self, tmp_path, text, line):
        with pytest.raises(GraphFormatError) as err:
            read_metis_graph(_write(tmp_path, text))
        assert err.value.line == line

    def test_csrbin_roundtrip(self, tmp_path, rng):
        g = random_graph(rng, 100, max_weight=9, vertex_weights=True)
        write_csrbin(tmp_path / "g.bin", g)
        assert _same(read_csrbin(tmp_path / "g.bin"), g)


class TestStreamCompress:
    def test_worker_counts_byte_identical(self, rng):
        for _ in range(20):
            g = random_graph(rng, 150, max_weight=1000)
            ref = compress_graph(g)
            for w in (1, 8):
                cg = stream_compress(NeighborhoodStream.from_graph(g), 16, workers=w)
                assert cg.blob.tobytes() == ref.blob.tobytes()
                assert np.array_equal(cg.offsets, ref.offsets)

    def test_triangle_packets(self):
        g = Graph.from_edges(3, [(0, 1), (1, 2), (0, 2)])
        sc = StreamCompressor(NeighborhoodStream.from_graph(g), 1, 1)
        sc.run()
        assert len(sc.packets) == 3
        assert all(p.state is PacketState.PLACED for p in sc.packets)
        ranges = [p.placed_at for p in sc.packets]
        assert all(a[1] <= b[0] for a, b in zip(ranges, ranges[1:]))

    def test_empty_stream(self):
        cg = stream_compress(NeighborhoodStream.from_graph(Graph.from_edges(0, [])))
        assert cg.offsets.tolist() == [1] and cg.blob.nbytes == 1  # version byte only

    def test_single_pass_and_commit(self, rng):
        g = random_graph(rng, 200)
        src = NeighborhoodStream.from_graph(g)
        sc = StreamCompressor(src, 32, 4)
        cg = sc.run()
        assert src.consumed == g.n
        assert sc.buffer.committed_length == cg.blob.nbytes <= sc.buffer.capacity_upper_bound
        ranges = sorted(p.placed_at for p in sc.packets)
        assert [p.index for p in sorted(sc.packets, key=lambda p: p.placed_at)] == \
            list(range(len(sc.packets)))
        assert all(a[1] == b[0] for a, b in zip(ranges, ranges[1:]))

    def test_metis_direct(self, tmp_path, rng):
        g = random_graph(rng, 120, max_weight=5)
        write_metis_graph(tmp_path / "g.metis", g)
        cg = read_metis_compressed(tmp_path / "g.metis", workers=3)
        assert cg.blob.tobytes() == compress_graph(g).blob.tobytes()


class TestReservedBuffer:
    def test_commit_bound(self):
        buf = ReservedBuffer(100)
        buf.commit(40)
        assert buf.view().nbytes == 40 and buf.capacity_upper_bound == 100
        with pytest.raises(CapacityExceeded):
            buf.commit(101)


class TestPartitionFile:
    def test_format(self, tmp_path):
        write_partition(tmp_path / "p", np.array([0, 1, 0]))
        assert (tmp_path / "p").read_text() == "0\n1\n0\n"
        assert read_partition(tmp_path / "p").tolist() == [0, 1, 0]

    def test_empty(self, tmp_path):
        write_partition(tmp_path / "p", np.array([], np.int32))
        assert (tmp_path / "p").read_text() == ""
