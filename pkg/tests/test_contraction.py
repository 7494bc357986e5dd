import threading

import numpy as np
import pytest

from mlpart.compression import compress_graph
from mlpart.contraction import (ContractionStats, CoarseOutput, DualCounter, NeighborhoodBuffer,
                                aggregate_coarse_neighborhood, contract, contract_reference,
                                finalize_neighborhoods, remap_targets)
from mlpart.graph import Clustering, Graph, validate_graph
from mlpart.testing import path_graph, random_graph, star_graph


def canonical(g, f2c):
    """Coarse graph relabeled by smallest fine member, as sorted edges + weights."""
    nc = g.n
    first = np.full(nc, np.iinfo(np.int64).max)
    np.minimum.at(first, f2c, np.arange(len(f2c)))
    order = np.argsort(first)
    rel = np.empty(nc, np.int64)
    rel[order] = np.arange(nc)
    edges = sorted((int(rel[u]), int(rel[v]), int(w))
                   for u in range(nc) for v, w in zip(*g.neighbors(u)))
    return edges, g.vertex_weights[order].tolist(), rel[f2c].tolist()


def random_labels(rng, n):
    k = int(rng.integers(1, n + 1))
    return rng.permutation(n)[rng.integers(0, k, n)]


class TestExamples:
    def test_path(self):
        g = path_graph(4)
        cg, mp = contract(g, np.array([0, 0, 2, 2]))
        assert cg.n == 2 and cg.vertex_weights.tolist() == [2, 2] and cg.m == 1
        assert cg.edge_weights.tolist() == [1, 1]
        assert mp.n_coarse == 2

    def test_triangle_collapse(self):
        g = Graph.from_edges(3, [(0, 1), (1, 2), (0, 2)])
        cg, _ = contract(g, np.zeros(3, np.int64))
        assert cg.n == 1 and cg.vertex_weights.tolist() == [3] and cg.m == 0

    def test_cycle_with_chord(self):
        g = Graph.from_edges(4, [(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)])
        cg, _ = contract(g, np.array([0, 0, 2, 2]))
        assert cg.m == 1 and cg.edge_weights.tolist() == [3, 3]

    def test_accepts_clustering_object(self):
        g = path_graph(4)
        c = Clustering(np.array([1, 1, 3, 3], np.int32), np.array([0, 2, 0, 2]), 2)
        assert contract(g, c)[0].n == 2


class TestAggregate:
    def test_path_cluster(self):
        assert aggregate_coarse_neighborhood(path_graph(4), [0, 0, 2, 2], 0) == {2: 1}

    def test_isolated(self):
        g = Graph.from_edges(3, [(1, 2)])
        assert aggregate_coarse_neighborhood(g, [0, 1, 1], 0) == {}

    def test_oracle(self, rng):
        for _ in range(20):
            g = random_graph(rng, 50, density=4)
            lab = random_labels(rng, g.n)
            for a in np.unique(lab).tolist():
                ref = {}
                for u in np.flatnonzero(lab == a):
                    for v, w in zip(*g.neighbors(int(u))):
                        if lab[v] != a:
                            ref[int(lab[v])] = ref.get(int(lab[v]), 0) + int(w)
                assert aggregate_coarse_neighborhood(g, lab, a) == ref
                assert aggregate_coarse_neighborhood(g, lab, a, t_bump=2) == ref


class TestDualCounter:
    def test_prior_pair(self):
        c = DualCounter(10, 4)
        assert c.fetch_add(4, 2) == (10, 4) and c.value == (14, 6)

    def test_concurrent_monotone(self):
        c = DualCounter()
        seen = [[] for _ in range(8)]

        def work(t):
            for i in range(2000):
                seen[t].append(c.fetch_add(3, 1))

        threads = [threading.Thread(target=work, args=(t,)) for t in range(8)]
        for th in threads:
            th.start()
        for th in threads:
            th.join()
        priors = sorted(p for s in seen for p in s)
        assert priors == [(3 * i, i) for i in range(16000)]
        assert c.value == (48000, 16000)


class TestFinalize:
    def test_two_neighborhoods(self):
        out = CoarseOutput.reserve(8, 20)
        out.counter.fetch_add(10, 4)
        buf = NeighborhoodBuffer(8)
        buf.append(7, [1, 2, 3], [1, 1, 1], 2)
        buf.append(5, [4], [9], 1)
        finalize_neighborhoods(buf, out)
        assert out.counter.value == (14, 6)
        assert out.offsets.array[4] == 10 and out.offsets.array[5] == 13
        assert out.arcs.array[10:14].tolist() == [1, 2, 3, 4]
        assert out.mapping[7] == 4 and out.mapping[5] == 5
        assert buf.fill == 0 and buf.count == 0

    def test_empty_buffer(self):
        out = CoarseOutput.reserve(4, 4)
        finalize_neighborhoods(NeighborhoodBuffer(4), out)
        assert out.counter.value == (0, 0)

    def test_remap(self):
        mapping = np.full(8, -1, np.int32)
        mapping[7], mapping[3] = 0, 1
        arcs = np.array([3, 7, 3], np.int32)
        remap_targets(arcs, mapping)
        assert arcs.tolist() == [1, 0, 1]
        ident = np.arange(5, dtype=np.int32)
        arcs = np.array([4, 0, 2], np.int32)
        remap_targets(arcs, ident, workers=3)
        assert arcs.tolist() == [4, 0, 2]


class TestOracle:
    def test_random_pairs(self, rng):
        for i in range(150):
            g = random_graph(rng, 128, density=4, max_weight=100, vertex_weights=True)
            lab = random_labels(rng, g.n)
            workers = int(rng.choice([1, 3, 8]))
            t_bump = int(rng.choice([2, 3, 10000]))
            stats = ContractionStats()
            cg, mp = contract(g, lab, workers=workers, t_bump=t_bump, buffer_arcs=2, stats=stats)
            assert validate_graph(cg) == []
            ref, f2c = contract_reference(g, lab)
            assert canonical(cg, mp.fine_to_coarse) == canonical(ref, f2c)
            assert stats.committed_arcs == 2 * cg.m <= stats.reserved_arcs == 2 * g.m

    def test_conservation(self, rng):
        for _ in range(50):
            g = random_graph(rng, 100, max_weight=20, vertex_weights=True)
            lab = random_labels(rng, g.n)
            cg, mp = contract(g, lab, workers=4)
            assert cg.vertex_weights.sum() == g.vertex_weights.sum()
            src = g.arc_sources()
            intra = int(g.edge_weights[lab[src] == lab[g.targets]].sum()) // 2
            assert int(cg.edge_weights.sum()) // 2 + intra == int(g.edge_weights.sum()) // 2

    def test_worker_counts_isomorphic(self, rng):
        g = random_graph(rng, 120, density=5)
        lab = random_labels(rng, g.n)
        results = [canonical(*((lambda r: (r[0], r[1].fine_to_coarse))(contract(g, lab, workers=w))))
                   for w in (1, 2, 8)]
        assert results[0] == results[1] == results[2]

    def test_compressed_input(self, rng):
        for _ in range(20):
            g = random_graph(rng, 100, max_weight=9)
            lab = random_labels(rng, g.n)
            cg, mp = contract(compress_graph(g), lab, workers=2, t_bump=3)
            ref, f2c = contract_reference(g, lab)
            assert canonical(cg, mp.fine_to_coarse) == canonical(ref, f2c)

    def test_high_degree_deferred(self):
        g = star_graph(300)
        lab = np.arange(301)
        lab[150:] = 0  # center cluster absorbs half the leaves
        stats = ContractionStats()
        cg, mp = contract(g, lab, workers=4, t_bump=8, stats=stats)
        assert stats.bumped >= 1
        ref, f2c = contract_reference(g, lab)
        assert canonical(cg, mp.fine_to_coarse) == canonical(ref, f2c)

    def test_bad_labels(self):
        with pytest.raises(ValueError):
            contract(path_graph(3), np.array([0, 5, 1]))
