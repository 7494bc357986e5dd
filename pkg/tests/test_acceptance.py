"""Acceptance criteria, one test each.

Every test records a PASS/FAIL line (printed in the terminal summary) and
then asserts the same condition. Runtime budgets are part of each check.
"""

import math
import statistics
import time
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest

from mlpart.clustering import cluster_coarsening, lp_round_reference, lp_round_two_phase
from mlpart.compression import compress_graph
from mlpart.contraction import ContractionStats, contract, contract_reference
from mlpart.driver import RunConfig, partition
from mlpart.gain_table import GainTable, affinity_matrix, sparse_entry_bound
from mlpart.graph import Clustering, Partition, is_balanced
from mlpart.io import NeighborhoodStream, stream_compress
from mlpart.memory import MemoryTracker
from mlpart.profile import load_runs, performance_profile
from mlpart.testing import (complete_graph, cycle_graph, erdos_renyi, grid_graph, hub_graph,
                            path_graph, random_geometric, random_graph, star_graph)

pytestmark = pytest.mark.acceptance


def timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


def geomean(xs):
    return math.exp(sum(math.log(x) for x in xs) / len(xs))


def canonical(g, f2c):
    first = np.full(g.n, np.iinfo(np.int64).max)
    np.minimum.at(first, f2c, np.arange(len(f2c)))
    rel = np.empty(g.n, np.int64)
    rel[np.argsort(first)] = np.arange(g.n)
    src = rel[g.arc_sources()]
    edges = sorted(zip(src.tolist(), rel[g.targets].tolist(), g.edge_weights.tolist()))
    return edges, g.vertex_weights[np.argsort(first)].tolist(), rel[f2c].tolist()


def random_labels(rng, n):
    k = int(rng.integers(1, n + 1))
    return rng.permutation(n)[rng.integers(0, k, n)].astype(np.int32)


# --- 1 ----------------------------------------------------------------------------------


def test_c01_codec_roundtrip(acceptance):
    rng = np.random.default_rng(101)

    def run():
        bad = 0
        for _ in range(1000):
            g = random_graph(rng, 256, max_weight=10**6, vertex_weights=True)
            ref = compress_graph(g)
            back = ref.to_graph()
            same = all(np.array_equal(a, b) for a, b in [
                (back.offsets, g.offsets), (back.targets, g.targets),
                (back.edge_weights, g.edge_weights), (back.vertex_weights, g.vertex_weights)])
            for w in (1, 4, 8):
                s = stream_compress(NeighborhoodStream.from_graph(g), 64, workers=w)
                same &= s.blob.tobytes() == ref.blob.tobytes()
                same &= np.array_equal(s.offsets, ref.offsets)
            bad += not same
        return bad

    bad, secs = timed(run)
    ok = acceptance(1, bad == 0 and secs < 30,
                    f"1000 graphs, {bad} mismatches across workers 1/4/8, {secs:.1f}s (< 30s)")
    assert ok


# --- 2 ----------------------------------------------------------------------------------


def test_c02_interval_benefit(acceptance):
    def run():
        # a 4-neighbor grid has no runs of 3 consecutive IDs, so use the 8-neighbor grid
        grid = grid_graph(512, 512, diagonals=True)
        er = erdos_renyi(grid.n, grid.m, seed=7)
        sizes = {}
        for name, g in (("grid", grid), ("er", er)):
            sizes[name] = (compress_graph(g).blob.nbytes,
                           compress_graph(g, interval_encoding=False).blob.nbytes)
        return sizes

    sizes, secs = timed(run)
    gi, gg = sizes["grid"]
    ei, eg = sizes["er"]
    grid_saving = 1 - gi / gg
    er_diff = abs(ei - eg) / max(ei, eg)
    ok = acceptance(2, grid_saving >= 0.10 and er_diff <= 0.15 and secs < 10,
                    f"grid: intervals save {grid_saving:.1%} (>= 10%); ER: sizes differ by "
                    f"{er_diff:.2%} (<= 15%); {secs:.1f}s (< 10s)")
    assert ok


# --- 3 ----------------------------------------------------------------------------------


def test_c03_two_phase_equivalence(acceptance):
    rng = np.random.default_rng(303)

    def identical_rounds():
        mismatches = 0
        for _ in range(500):
            g = random_graph(rng, 200, density=int(rng.integers(2, 8)), max_weight=5,
                             vertex_weights=bool(rng.integers(2)))
            limit = int(rng.integers(2, 12))
            c1, c2 = Clustering.singletons(g, limit), Clustering.singletons(g, limit)
            t_bump = g.max_degree() + 1 if g.m else 2
            for r in range(3):
                order = rng.permutation(g.n)
                lp_round_reference(g, c1, order)
                lp_round_two_phase(g, c2, t_bump, order=order, deterministic=True,
                                   round_index=r)
            mismatches += not np.array_equal(c1.assignment, c2.assignment)
        return mismatches

    def bump_quality():
        ratios = []
        for i in range(50):
            g = random_geometric(2000, 6 + i % 8, seed=3000 + i)
            cfg = dict(k=8, seed=i, deterministic=True)
            _, forced = partition(g, RunConfig(t_bump=4, **cfg))
            _, plain = partition(g, RunConfig(**cfg))
            ratios.append(max(forced.cut, 1) / max(plain.cut, 1))
        return geomean(ratios)

    (mismatches, gm), secs = timed(lambda: (identical_rounds(), bump_quality()))
    ok = acceptance(3, mismatches == 0 and abs(gm - 1) <= 0.02 and secs < 120,
                    f"500 graphs, {mismatches} clustering mismatches; forced bumping cut "
                    f"geomean ratio {gm:.4f} (within 2%); {secs:.1f}s (< 120s)")
    assert ok


# --- 4 ----------------------------------------------------------------------------------


def test_c04_contraction_oracle(acceptance):
    rng = np.random.default_rng(404)

    def run():
        bad = 0
        for i in range(500):
            g = random_graph(rng, 160, density=int(rng.integers(1, 8)), max_weight=1000,
                             vertex_weights=True)
            lab = random_labels(rng, g.n) if g.n else np.zeros(0, np.int32)
            cg, mp = contract(g, lab, workers=int(rng.choice([1, 2, 8])),
                              t_bump=int(rng.choice([2, 4, 10000])), buffer_arcs=8)
            ref, f2c = contract_reference(g, lab)
            src = g.arc_sources()
            intra = int(g.edge_weights[lab[src] == lab[g.targets]].sum())
            good = (canonical(cg, mp.fine_to_coarse) == canonical(ref, f2c)
                    and cg.vertex_weights.sum() == g.vertex_weights.sum()
                    and int(cg.edge_weights.sum()) + intra == int(g.edge_weights.sum()))
            bad += not good
        return bad

    bad, secs = timed(run)
    ok = acceptance(4, bad == 0 and secs < 60,
                    f"500 pairs, {bad} differ from brute force or break conservation; "
                    f"{secs:.1f}s (< 60s)")
    assert ok


# --- 5 ----------------------------------------------------------------------------------


def test_c05_dual_counter_coverage(acceptance):
    rng = np.random.default_rng(505)

    def run():
        bad, flushes = 0, 0
        for _ in range(100):
            g = random_graph(rng, 400, density=int(rng.integers(2, 10)), max_weight=9)
            lab = random_labels(rng, g.n) if g.n else np.zeros(0, np.int32)
            stats = ContractionStats()
            cg, _ = contract(g, lab, workers=8, buffer_arcs=16, stats=stats)
            ranges = sorted((d, d + fill) for d, fill in stats.flushes if fill)
            end = 0
            good = stats.bumped == 0
            for lo, hi in ranges:
                good &= lo == end
                end = hi
            good &= end == 2 * cg.m and stats.committed_arcs == 2 * cg.m
            good &= stats.reserved_arcs == 2 * g.m
            flushes += len(ranges)
            bad += not good
        return bad, flushes

    (bad, flushes), secs = timed(run)
    ok = acceptance(5, bad == 0 and secs < 60,
                    f"100 instances at 8 workers, {flushes} flushed ranges, {bad} not tiling "
                    f"[0, 2m') exactly; {secs:.1f}s (< 60s)")
    assert ok


# --- 6 ----------------------------------------------------------------------------------


def hygiene_problems(t):
    problems = 0
    for v in range(t.n):
        if t.is_dense_row(v):
            continue
        slots = t.tiny_slots(v)
        for s, entry in enumerate(slots):
            if entry is None:
                continue
            problems += entry[1] <= 0
            i = t.home(entry[0], v)
            while i != s:
                problems += slots[i] is None
                i = (i + 1) % len(slots)
    return problems


def test_c06_gain_table_consistency(acceptance):
    rng = np.random.default_rng(606)

    def run():
        bad = 0
        for i in range(20):
            k = (2, 5, 8)[i % 3]
            g = random_graph(rng, 64, density=int(rng.integers(2, 10)), max_weight=500)
            if g.n < 2:
                g = cycle_graph(8)
            p = Partition.build(g, rng.integers(0, k, g.n), k, budget=g.total_vertex_weight)
            t = GainTable(g, p)
            for step in range(1, 1001):
                u = int(rng.integers(g.n))
                frm = int(p.assignment[u])
                to = int(rng.integers(k - 1))
                to += to >= frm
                p.assignment[u] = to
                p.block_weights[frm] -= g.vertex_weights[u]
                p.block_weights[to] += g.vertex_weights[u]
                t.apply_move_update(u, frm, to, check=True)
                if step % 100 == 0:
                    bad += not np.array_equal(t.as_matrix(), affinity_matrix(g, p.assignment, k))
                    bad += hygiene_problems(t)
        return bad

    bad, secs = timed(run)
    ok = acceptance(6, bad == 0 and secs < 60,
                    f"20 instances x 1000 moves, {bad} stale affinities or chain defects; "
                    f"{secs:.1f}s (< 60s)")
    assert ok


# --- 7 ----------------------------------------------------------------------------------


def test_c07_space_bound(acceptance):
    rng = np.random.default_rng(707)
    graphs = [path_graph(100), cycle_graph(64), star_graph(200), complete_graph(20),
              grid_graph(30, 30), grid_graph(20, 20, diagonals=True),
              random_geometric(3000, 10, seed=1), hub_graph(5000, hub_degree=1000, hubs=4)]
    graphs += [random_graph(rng, 500, density=int(d)) for d in (2, 6, 20)]

    def run():
        bad, checks = 0, 0
        for g in graphs:
            for k in (2, 8, 64):
                p = Partition.build(g, np.arange(g.n) % k, k, budget=g.n)
                entries = GainTable(g, p).memory_footprint()["entries"]
                checks += 1
                bad += entries > sparse_entry_bound(g, k)
                if k >= 8 and (g.degrees() < k).any():
                    bad += not entries < g.n * k
        return bad, checks

    (bad, checks), secs = timed(run)
    ok = acceptance(7, bad == 0 and secs < 10,
                    f"{checks} (graph, k) tables, {bad} above 2*sum(min(deg,k)) or not below n*k; "
                    f"{secs:.1f}s (< 10s)")
    assert ok


# --- 8 / 9 ------------------------------------------------------------------------------

SUITE = [(5000, 6 + (i % 7), 8000 + i) for i in range(30)]


@lru_cache(maxsize=None)
def suite_run(idx, refiner, mode="sparse"):
    n, deg, seed = SUITE[idx]
    g = random_geometric(n, deg, seed=seed)
    _, rep = partition(g, RunConfig(k=8, seed=idx, deterministic=True, refiner=refiner,
                                    gain_table_mode=mode))
    return rep.cut, rep.times["refine"]


def test_c08_fm_efficacy(acceptance):
    def run():
        return [(suite_run(i, "lp")[0], suite_run(i, "lp+fm")[0]) for i in range(len(SUITE))]

    pairs, secs = timed(run)
    ratios = [fm / lp for lp, fm in pairs]
    med = statistics.median(ratios)
    mean_gain = statistics.fmean(1 - r for r in ratios)
    ok = acceptance(8, med <= 1 and mean_gain >= 0.02 and secs < 180,
                    f"30 RGG n=5000 k=8: median fm/lp cut ratio {med:.4f} (<= 1), mean "
                    f"improvement {mean_gain:.2%} (>= 2%); {secs:.1f}s (< 180s)")
    assert ok


def test_c09_gain_table_modes(acceptance):
    def run():
        rows = []
        for i in range(len(SUITE)):
            rows.append({m: suite_run(i, "lp+fm", m) for m in ("sparse", "dense", "none")})
        return rows

    rows, secs = timed(run)
    gm = {m: geomean([max(r[m][0], 1) / max(r["sparse"][0], 1) for r in rows])
          for m in ("dense", "none")}
    slow = geomean([r["none"][1] / r["sparse"][1] for r in rows])
    ok = acceptance(9, all(abs(v - 1) <= 0.01 for v in gm.values()) and secs < 300,
                    f"cut geomean vs sparse: dense {gm['dense']:.4f}, none {gm['none']:.4f} "
                    f"(within 1%); refine time none/sparse {slow:.2f}x (informational); "
                    f"{secs:.1f}s (< 300s)")
    assert ok


# --- 10 ---------------------------------------------------------------------------------


def test_c10_end_to_end_sanity(acceptance):
    def run():
        grid = grid_graph(64, 64)
        cuts = []
        balanced = True
        for seed in range(5):
            p, rep = partition(grid, RunConfig(k=4, epsilon=0.03, seed=seed))
            cuts.append(rep.cut)
            balanced &= is_balanced(p)
        _, k8 = partition(complete_graph(8), RunConfig(k=2, epsilon=0.0))
        return cuts, balanced, k8.cut

    (cuts, balanced, k8), secs = timed(run)
    ok = acceptance(10, balanced and max(cuts) <= 192 and k8 == 16 and secs < 10,
                    f"64x64 grid k=4 cuts {cuts} (<= 192, balanced={balanced}); K_8 k=2 cut "
                    f"{k8} (== 16); {secs:.1f}s (< 10s)")
    assert ok


# --- 11 ---------------------------------------------------------------------------------


def test_c11_balance_sweep(acceptance):
    rng = np.random.default_rng(1111)
    unbalanced, runs = 0, 0
    for i in range(40):
        g = random_graph(rng, 800, density=int(rng.integers(2, 10)), vertex_weights=True)
        k = int(rng.integers(2, 40))
        eps = float(rng.choice([0.0, 0.01, 0.03, 0.1]))
        if g.n == 0 or g.max_vertex_weight * k > g.total_vertex_weight:
            continue
        cfg = RunConfig(k=k, epsilon=eps, seed=i, workers=1 + i % 4,
                        refiner=("lp", "lp+fm")[i % 2],
                        gain_table_mode=("sparse", "dense", "none")[i % 3],
                        compress_input=i % 5 == 0)
        try:
            p, _ = partition(g, cfg)
        except Exception:  # infeasible at eps=0 for some weight mixes
            continue
        runs += 1
        unbalanced += not is_balanced(p)
    ok = acceptance(11, unbalanced == 0, f"sweep: {runs} partitions, {unbalanced} unbalanced")
    assert ok


# --- 12 ---------------------------------------------------------------------------------


def test_c12_performance_profile(acceptance):
    expected = {1.0: (0.8, 0.5, 0.2), 1.01: (0.8, 0.7, 0.2), 1.1: (0.9, 1.0, 0.3),
                2.0: (1.0, 1.0, 0.8)}
    prof = performance_profile(load_runs(Path(__file__).parent / "data" / "profile_3x10.csv"),
                               taus=list(expected))
    got = {tau: tuple(prof.at(tau)[a] for a in "ABC") for tau in expected}
    ok = acceptance(12, got == expected, f"fractions at tau 1/1.01/1.1/2: {list(got.values())}")
    assert ok


# --- 13 ---------------------------------------------------------------------------------


def test_c13_memory_trend(acceptance):
    def run():
        g = hub_graph(1_000_000)
        limit = 8
        peaks = {}
        for mode in ("two_phase", "sparse_array"):
            for workers in (1, 8):
                tr = MemoryTracker()
                with tr.phase("clustering"):
                    cluster_coarsening(g, limit, rounds=1, workers=workers, seed=1,
                                       rating_mode=mode, tracker=tr)
                peaks[mode, workers] = tr.phase_peaks["clustering"]
        return g, peaks

    (g, peaks), secs = timed(run)
    tp1, tp8 = peaks["two_phase", 1], peaks["two_phase", 8]
    sa1, sa8 = peaks["sparse_array", 1], peaks["sparse_array", 8]
    bound = 8 * g.n * 8
    ok = acceptance(13, max(tp1, tp8) <= bound and abs(tp8 / tp1 - 1) <= 0.2
                    and sa8 >= 4 * sa1 and secs < 180,
                    f"n={g.n} m={g.m}: two-phase peak {tp1 / 1e6:.1f}MB at 1 worker, "
                    f"{tp8 / 1e6:.1f}MB at 8 (ratio {tp8 / tp1:.2f}, bound {bound / 1e6:.0f}MB); "
                    f"sparse-array {sa1 / 1e6:.1f}MB -> {sa8 / 1e6:.1f}MB "
                    f"(ratio {sa8 / sa1:.2f} >= 4); {secs:.1f}s (< 180s)")
    assert ok
