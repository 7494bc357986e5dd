import numpy as np
import pytest
from hypothesis import given, strategies as st

from mlpart.compression import (CHUNK_LENGTH, CHUNK_THRESHOLD, MalformedEncodingError,
                                compress_graph, compression_ratio, decode_varint_array,
                                encode_neighborhood, encode_varint_array, unzigzag,
                                varint_decode, varint_encode, zigzag)
from mlpart.graph import Graph
from mlpart.testing import grid_graph, path_graph, random_graph, star_graph


def same_graph(a: Graph, b: Graph) -> bool:
    return (a.offsets.tolist() == b.offsets.tolist() and a.targets.tolist() == b.targets.tolist()
            and a.edge_weights.tolist() == b.edge_weights.tolist()
            and a.vertex_weights.tolist() == b.vertex_weights.tolist())


class TestVarint:
    @pytest.mark.parametrize("value,data", [(0, b"\x00"), (127, b"\x7f"), (128, b"\x80\x01")])
    def test_encode(self, value, data):
        assert varint_encode(value) == data

    @pytest.mark.parametrize("data,out", [(b"\x00", (0, 1)), (b"\x80\x01", (128, 2))])
    def test_decode(self, data, out):
        assert varint_decode(data) == out

    def test_overlong_chain(self):
        with pytest.raises(MalformedEncodingError):
            varint_decode(b"\xff" * 11)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            varint_encode(-1)

    def test_bulk_roundtrip(self):
        rng = np.random.default_rng(0)
        vals = rng.integers(0, 2**63 - 1, 10**6, dtype=np.int64, endpoint=True)
        vals[:1000] = rng.integers(0, 300, 1000)
        data = encode_varint_array(vals.astype(np.uint64))
        assert np.array_equal(decode_varint_array(data, len(vals)).astype(np.int64), vals)

    @given(st.integers(0, 2**64 - 1))
    def test_minimal_length(self, v):
        data = varint_encode(v)
        assert varint_decode(data) == (v, len(data))
        assert len(data) == max(1, (v.bit_length() + 6) // 7)


class TestZigzag:
    @pytest.mark.parametrize("v,z", [(0, 0), (-1, 1), (3, 6)])
    def test_examples(self, v, z):
        assert zigzag(v) == z and unzigzag(z) == v

    @given(st.integers(-2**62, 2**62))
    def test_bijection(self, v):
        assert unzigzag(zigzag(v)) == v and zigzag(v) >= 0


class TestEncodeNeighborhood:
    def test_interval_example(self):
        # header 0, one interval at zigzag(3-10)=13 of length 3+0, residual zigzag(9-10)=1
        assert list(encode_neighborhood(10, [(3, 1), (4, 1), (5, 1), (9, 1)])) == [0, 1, 13, 0, 1]

    def test_residual_gaps(self):
        # no interval; residuals zigzag(5)=10, then 7-5-1=1, then 12-7-1=4
        assert list(encode_neighborhood(0, [(5, 1), (7, 1), (12, 1)])) == [0, 0, 10, 1, 4]

    def test_empty_is_header_only(self):
        assert encode_neighborhood(4, [], first_edge_id=300) == varint_encode(300)

    def test_preconditions(self):
        with pytest.raises(ValueError):
            encode_neighborhood(0, [(3, 1), (2, 1)])
        with pytest.raises(ValueError):
            encode_neighborhood(0, [(2, 1), (2, 1)])

    def test_deterministic_reencode(self, rng):
        g = random_graph(rng, 80, density=6)
        cg = compress_graph(g)
        for u in range(g.n):
            t, w = cg.neighbors(u)
            a = encode_neighborhood(u, list(zip(t.tolist(), w.tolist())),
                                    first_edge_id=cg.first_edge_id(u), weighted=cg.has_edge_weights)
            lo, hi = int(cg.offsets[u]), int(cg.offsets[u + 1])
            assert a == cg.blob[lo:hi].tobytes()


class TestCompressedGraph:
    def test_triangle_decode(self):
        cg = compress_graph(Graph.from_edges(3, [(0, 1), (1, 2), (0, 2)]))
        seen = []
        cg.decode_neighborhood(0, lambda e, t, w: seen.append((e, t, w)))
        assert seen == [(0, 1, 1), (1, 2, 1)]

    def test_isolated_vertex(self):
        cg = compress_graph(Graph.from_edges(3, [(0, 1)]))
        seen = []
        cg.decode_neighborhood(2, lambda *a: seen.append(a))
        assert seen == []

    def test_chunked_high_degree(self):
        g = star_graph(25000)
        cg = compress_graph(g)
        t, w = cg.neighbors(0)
        assert sorted(t.tolist()) == list(range(1, 25001))
        seen = []
        cg.decode_neighborhood_parallel(0, lambda e, t, w: seen.append((e, t, w)), workers=4)
        assert sorted(seen) == [(i, i + 1, 1) for i in range(25000)]

    def test_parallel_star_15000(self):
        cg = compress_graph(star_graph(15000))
        seq, par = [], []
        cg.decode_neighborhood(0, lambda *a: seq.append(a))
        cg.decode_neighborhood_parallel(0, lambda *a: par.append(a), workers=4)
        assert sorted(seq) == sorted(par)
        one = []
        cg.decode_neighborhood_parallel(0, lambda *a: one.append(a), workers=1)
        assert one == seq

    def test_threshold_plus_one_two_chunks(self):
        cg = compress_graph(star_graph(CHUNK_THRESHOLD + 1))
        chunks = -(-cg.degree(0) // CHUNK_LENGTH)
        assert cg.degree(0) == CHUNK_THRESHOLD + 1 and chunks == CHUNK_THRESHOLD // CHUNK_LENGTH + 1
        small = compress_graph(star_graph(1001), chunk_threshold=1000, chunk_length=1000)
        out = []
        small.decode_neighborhood_parallel(0, lambda *a: out.append(a), workers=2)
        assert len(out) == 1001

    def test_parallel_rejects_low_degree(self):
        with pytest.raises(ValueError):
            compress_graph(path_graph(4)).decode_neighborhood_parallel(1, lambda *a: None)

    def test_corrupt_blob(self):
        cg = compress_graph(grid_graph(5, 5))
        lo = int(cg.offsets[3])
        cg.blob[lo: lo + 11] = 0xFF
        with pytest.raises(MalformedEncodingError) as err:
            cg.to_graph()
        assert err.value.offset is not None

    def test_first_edge_headers(self, rng):
        g = random_graph(rng, 100)
        cg = compress_graph(g)
        firsts = [cg.first_edge_id(u) for u in range(g.n)] + [2 * g.m]
        assert np.array_equal(np.diff(firsts), g.degrees())

    def test_roundtrip_weighted(self, rng):
        for _ in range(100):
            g = random_graph(rng, 256, max_weight=10**6, vertex_weights=True)
            assert same_graph(compress_graph(g).to_graph(), g)

    def test_grid_interval_benefit(self):
        g = grid_graph(30, 30, diagonals=True)
        assert compression_ratio(g, compress_graph(g)) > compression_ratio(
            g, compress_graph(g, interval_encoding=False))

    def test_path_ratio(self):
        g = path_graph(1000)
        assert compression_ratio(g, compress_graph(g)) > 4

    def test_size_not_above_csr(self):
        for g in (grid_graph(20, 20), path_graph(500), grid_graph(10, 10, diagonals=True)):
            cg = compress_graph(g)
            assert cg.blob.nbytes <= 8 * 2 * g.m
