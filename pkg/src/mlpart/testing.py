"""Synthetic instance generators for tests and benchmarks."""

from __future__ import annotations

import numpy as np
from numba import njit

from .graph import Graph


def path_graph(n: int) -> Graph:
    return Graph.from_edges(n, [(i, i + 1) for i in range(n - 1)])


def cycle_graph(n: int) -> Graph:
    return Graph.from_edges(n, [(i, (i + 1) % n) for i in range(n)])


def star_graph(leaves: int) -> Graph:
    return Graph.from_edges(leaves + 1, [(0, i) for i in range(1, leaves + 1)])


def complete_graph(n: int) -> Graph:
    iu = np.triu_indices(n, 1)
    return Graph.from_edges(n, np.column_stack(iu))


def grid_graph(rows: int, cols: int, diagonals: bool = False) -> Graph:
    """Row-major grid; ``diagonals=True`` adds the 8-neighborhood (Moore) arcs."""
    ids = np.arange(rows * cols).reshape(rows, cols)
    parts = [np.column_stack([ids[:, :-1].ravel(), ids[:, 1:].ravel()]),
             np.column_stack([ids[:-1, :].ravel(), ids[1:, :].ravel()])]
    if diagonals:
        parts.append(np.column_stack([ids[:-1, :-1].ravel(), ids[1:, 1:].ravel()]))
        parts.append(np.column_stack([ids[:-1, 1:].ravel(), ids[1:, :-1].ravel()]))
    return Graph.from_edges(rows * cols, np.concatenate(parts))


def erdos_renyi(n: int, m: int, seed: int = 0, max_weight: int = 1) -> Graph:
    """About ``m`` uniformly random edges (duplicates and loops removed)."""
    rng = np.random.default_rng(seed)
    e = rng.integers(0, n, size=(int(m * 1.02) + 8, 2))
    e = e[e[:, 0] != e[:, 1]]
    e = np.unique(np.sort(e, axis=1), axis=0)
    e = e[rng.permutation(len(e))[:m]]
    w = rng.integers(1, max_weight + 1, len(e)) if max_weight > 1 else None
    return Graph.from_edges(n, e, w)


@njit(cache=True)
def _rgg_pairs(x, y, cell, cells_per_side, radius):
    n = len(x)
    counts = np.zeros(cells_per_side * cells_per_side + 1, np.int64)
    for i in range(n):
        counts[cell[i] + 1] += 1
    for c in range(len(counts) - 1):
        counts[c + 1] += counts[c]
    r2 = radius * radius
    out_u = []
    out_v = []
    for i in range(n):
        cx = cell[i] // cells_per_side
        cy = cell[i] % cells_per_side
        for dx in range(-1, 2):
            for dy in range(-1, 2):
                nx = cx + dx
                ny = cy + dy
                if nx < 0 or ny < 0 or nx >= cells_per_side or ny >= cells_per_side:
                    continue
                c = nx * cells_per_side + ny
                for j in range(counts[c], counts[c + 1]):
                    if j <= i:
                        continue
                    ddx = x[i] - x[j]
                    ddy = y[i] - y[j]
                    if ddx * ddx + ddy * ddy <= r2:
                        out_u.append(i)
                        out_v.append(j)
    return np.array(out_u, np.int64), np.array(out_v, np.int64)


def random_geometric(n: int, avg_degree: float = 8.0, seed: int = 0) -> Graph:
    """Unit-square random geometric graph, vertex IDs sorted by grid cell."""
    rng = np.random.default_rng(seed)
    radius = float(np.sqrt(avg_degree / (np.pi * max(n, 1))))
    side = max(1, int(1.0 / radius))
    x, y = rng.random(n), rng.random(n)
    cell = (np.minimum((x * side).astype(np.int64), side - 1) * side
            + np.minimum((y * side).astype(np.int64), side - 1))
    order = np.argsort(cell, kind="stable")
    x, y, cell = x[order], y[order], cell[order]
    u, v = _rgg_pairs(x, y, cell, side, radius)
    return Graph.from_edges(n, np.column_stack([u, v]))


def hub_graph(n: int, avg_degree: int = 16, hubs: int = 16, hub_degree: int = 20000,
              window: int = 64, seed: int = 0) -> Graph:
    """Mostly local random edges plus a few very high degree hubs.

    Each vertex links to ``avg_degree / 2 - 1`` random vertices within
    ``window`` of its ID and to one uniformly random vertex.
    """
    rng = np.random.default_rng(seed)
    local = max(avg_degree // 2 - 1, 0)
    src = np.repeat(np.arange(n, dtype=np.int64), local + 1)
    off = rng.integers(1, window + 1, size=len(src))
    dst = (src + off) % n
    dst[local :: local + 1] = rng.integers(0, n, size=n)
    hub_ids = rng.choice(n, size=min(hubs, n), replace=False)
    hub_src = np.repeat(hub_ids, min(hub_degree, n - 1))
    hub_dst = rng.integers(0, n, size=len(hub_src))
    e = np.column_stack([np.concatenate([src, hub_src]), np.concatenate([dst, hub_dst])])
    return Graph.from_edges(n, e)


def random_graph(rng: np.random.Generator, n_max: int = 64, density: float = 3.0,
                 max_weight: int = 10, vertex_weights: bool = False) -> Graph:
    """Small random multigraph-derived instance for property tests."""
    n = int(rng.integers(1, n_max + 1))
    m = int(rng.integers(0, int(density * n) + 1))
    e = rng.integers(0, n, size=(m, 2))
    w = rng.integers(1, max_weight + 1, size=m)
    vw = rng.integers(1, 4, size=n) if vertex_weights else None
    return Graph.from_edges(n, e, w, vw)
