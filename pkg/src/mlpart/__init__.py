"""Shared-memory multilevel graph partitioning with compact data structures."""

from .clustering import cluster_coarsening, lp_round_reference, lp_round_two_phase
from .compression import CompressedGraph, compress_graph, compression_ratio
from .contraction import CoarseMapping, contract, contract_reference
from .driver import MultilevelHierarchy, RunConfig, RunReport, partition, project_partition
from .fm import FMConfig, fm_refine
from .gain_table import GainTable, build_gain_table
from .graph import (Clustering, Graph, InfeasibleError, Partition, StructuralError, edge_cut,
                    imbalance, is_balanced, max_block_weight, validate_graph)
from .initial import initial_partition
from .io import read_graph, read_metis_compressed, read_partition, write_metis_graph, write_partition
from .memory import MemoryTracker
from .profile import performance_profile
from .refinement import lp_refine

__version__ = "0.1.0"

__all__ = [
    "Clustering", "CoarseMapping", "CompressedGraph", "FMConfig", "GainTable", "Graph",
    "InfeasibleError", "MemoryTracker", "MultilevelHierarchy", "Partition", "RunConfig",
    "RunReport", "StructuralError", "build_gain_table", "cluster_coarsening", "compress_graph",
    "compression_ratio", "contract", "contract_reference", "edge_cut", "fm_refine", "imbalance",
    "initial_partition", "is_balanced", "lp_refine", "lp_round_reference", "lp_round_two_phase",
    "max_block_weight", "partition", "performance_profile", "project_partition", "read_graph",
    "read_metis_compressed", "read_partition", "validate_graph", "write_metis_graph",
    "write_partition",
]
