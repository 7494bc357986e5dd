"""Multilevel orchestration: coarsen, partition the coarsest graph, then
project and refine level by level."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from .clustering import RATING_MODES, cluster_coarsening, coarsening_cluster_weight
from .compression import CompressedGraph, compress_graph, csr_reference_bytes
from .contraction import CoarseMapping, contract
from .fm import FMConfig, fm_refine
from .gain_table import MODES as GAIN_TABLE_MODES
from .gain_table import GainTable
from .graph import (Graph, InfeasibleError, Partition, edge_cut, imbalance, is_balanced,
                    max_block_weight)
from .initial import initial_partition
from .memory import MemoryTracker
from .refinement import LPRefiner, lp_refine

REFINERS = ("lp", "lp+fm")
MIN_SHRINK = 1.05


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    k: int
    epsilon: float = 0.03
    seed: int = 0
    workers: int = 1
    coarsening_rounds: int = 5
    refinement_rounds: int = 5
    t_bump: int = 10000
    refiner: str = "lp"
    gain_table_mode: str = "sparse"
    compress_input: bool = False
    coarsening_target: int = 32
    deterministic: bool = False
    rating_mode: str = "two_phase"
    fm: FMConfig = field(default_factory=FMConfig)

    def validate(self) -> "RunConfig":
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(isinstance(self.k, (int, np.integer)) and self.k >= 1, "k must be a positive integer")
        need(math.isfinite(float(self.epsilon)) and self.epsilon >= 0,
             "epsilon must be a finite non-negative number")
        need(self.workers >= 1, "workers must be at least 1")
        need(self.coarsening_rounds >= 0 and self.refinement_rounds >= 0,
             "rounds must be non-negative")
        need(self.t_bump >= 1, "t_bump must be at least 1")
        need(self.refiner in REFINERS, f"refiner must be one of {REFINERS}")
        need(self.gain_table_mode in GAIN_TABLE_MODES,
             f"gain table mode must be one of {GAIN_TABLE_MODES}")
        need(self.rating_mode in RATING_MODES, f"rating mode must be one of {RATING_MODES}")
        need(self.coarsening_target >= 1, "coarsening target must be at least 1")
        need(self.fm.max_seeds >= 1 and self.fm.adjacency_limit >= 1 and self.fm.passes >= 0,
             "invalid FM settings")
        return self

    @property
    def effective_workers(self) -> int:
        return 1 if self.deterministic else int(self.workers)


@dataclass
class LevelStats:
    n: int
    m: int


@dataclass
class RunReport:
    cut: int
    imbalance: float
    balanced: bool
    times: dict[str, float]
    phase_peaks: dict[str, int]
    peak_aux_bytes: int
    levels: list[LevelStats]
    compression_ratio: float

    def as_dict(self) -> dict:
        return asdict(self)


def project_partition(coarse: Partition, mapping) -> Partition:
    """Fine partition with ``block(u) = coarse block of fine_to_coarse(u)``."""
    f2c = mapping.fine_to_coarse if isinstance(mapping, CoarseMapping) else np.asarray(mapping)
    return Partition(coarse.k, coarse.epsilon, coarse.assignment[f2c],
                     coarse.block_weights.copy(), coarse.max_block_weight)


@dataclass
class MultilevelHierarchy:
    """``levels[i] = (graph_i, mapping from graph_i to graph_{i+1})``."""

    levels: list[tuple[object, CoarseMapping]] = field(default_factory=list)
    coarsest: object = None

    @property
    def sizes(self) -> list[LevelStats]:
        graphs = [g for g, _ in self.levels] + [self.coarsest]
        return [LevelStats(int(g.n), int(g.m)) for g in graphs]

    def project_to_input(self, coarse: Partition) -> Partition:
        p = coarse
        for _, mapping in reversed(self.levels):
            p = project_partition(p, mapping)
        return p


def _graph_arrays(g) -> list:
    if isinstance(g, CompressedGraph):
        return [g.blob, g.offsets, g.vertex_weights]
    return [g.offsets, g.targets, g.edge_weights, g.vertex_weights]


def coarsen(g, cfg: RunConfig, tracker: MemoryTracker) -> MultilevelHierarchy:
    """Contract until ``n <= C * k`` or a level shrinks by less than 5%."""
    h = MultilevelHierarchy()
    cur = g
    W = g.total_vertex_weight
    workers = cfg.effective_workers
    level = 0
    while cfg.k > 1 and cur.n > cfg.coarsening_target * cfg.k:
        limit = coarsening_cluster_weight(W, cur.n, cfg.k)
        with tracker.phase("coarsening.clustering"):
            c = cluster_coarsening(cur, limit, cfg.coarsening_rounds, cfg.t_bump,
                                   workers=workers, seed=cfg.seed * 7919 + level,
                                   deterministic=cfg.deterministic,
                                   rating_mode=cfg.rating_mode, tracker=tracker)
        if c.n_clusters * MIN_SHRINK > cur.n:
            tracker.release(c.assignment, c.cluster_weights)
            break
        with tracker.phase("coarsening.contraction"):
            coarse, mapping = contract(cur, c, workers=workers, t_bump=cfg.t_bump,
                                       tracker=tracker)
        tracker.release(c.assignment, c.cluster_weights)
        for a in _graph_arrays(coarse):
            tracker.track("hierarchy", a)
        h.levels.append((cur, mapping))
        cur = coarse
        level += 1
    h.coarsest = cur
    return h


def refine(g, p: Partition, cfg: RunConfig, tracker: MemoryTracker, level: int,
           lp: LPRefiner) -> None:
    workers = cfg.effective_workers
    seed = cfg.seed * 104729 + level
    lp_refine(g, p, cfg.refinement_rounds, workers=workers, seed=seed,
              deterministic=cfg.deterministic, refiner=lp)
    if cfg.refiner == "lp+fm" and g.n:
        table = GainTable(g, p, cfg.gain_table_mode, workers)
        handle = tracker.add_bytes("fm.gain_table", table.memory_footprint()["bytes"])
        fm_refine(g, p, table, cfg.fm, workers=workers, seed=seed,
                  deterministic=cfg.deterministic)
        tracker.release(handle)


def partition(g, config: RunConfig, tracker: MemoryTracker | None = None
              ) -> tuple[Partition, RunReport]:
    """Balanced ``k``-way partition of ``g`` (a Graph or CompressedGraph)."""
    cfg = config.validate()
    tracker = tracker or MemoryTracker()
    times: dict[str, float] = {}
    t_start = time.perf_counter()

    W = g.total_vertex_weight
    budget = max_block_weight(max(W, 1), cfg.k, cfg.epsilon)
    if g.n and g.max_vertex_weight > budget:
        raise InfeasibleError(f"vertex weight {g.max_vertex_weight} exceeds block budget {budget}")

    work = g
    ratio = 1.0
    if cfg.compress_input and isinstance(g, Graph):
        t0 = time.perf_counter()
        work = compress_graph(g)
        times["compress"] = time.perf_counter() - t0
    if isinstance(work, CompressedGraph):
        ratio = float(Fraction(csr_reference_bytes(work.n, work.m), work.nbytes()))

    t0 = time.perf_counter()
    with tracker.phase("coarsening"):
        h = coarsen(work, cfg, tracker)
    times["coarsen"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    with tracker.phase("initial"):
        p = initial_partition(h.coarsest, cfg.k, cfg.epsilon, seed=cfg.seed, budget=budget)
    times["initial"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    lp = LPRefiner(cfg.k, cfg.effective_workers)
    with tracker.phase("refinement"):
        refine(h.coarsest, p, cfg, tracker, len(h.levels), lp)
        for level in range(len(h.levels) - 1, -1, -1):
            fine, mapping = h.levels[level]
            for a in _graph_arrays(h.levels[level + 1][0] if level + 1 < len(h.levels)
                                   else h.coarsest):
                tracker.release(a)
            p = project_partition(p, mapping)
            tracker.release(mapping.fine_to_coarse, mapping.cluster_to_coarse)
            refine(fine, p, cfg, tracker, level, lp)
    times["refine"] = time.perf_counter() - t0
    times["total"] = time.perf_counter() - t_start

    report = RunReport(
        cut=edge_cut(g, p), imbalance=imbalance(p), balanced=is_balanced(p), times=times,
        phase_peaks=dict(tracker.phase_peaks), peak_aux_bytes=tracker.peak,
        levels=h.sizes, compression_ratio=ratio)
    return p, report
