"""Performance profiles over benchmark runs.

For each algorithm A and factor tau >= 1 the profile value is the fraction
of instances I with ``cut_A(I) <= tau * min over A' of cut_A'(I)``. Several
runs of one (instance, algorithm) pair are averaged arithmetically first.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

DEFAULT_TAUS = (1.0, 1.01, 1.02, 1.05, 1.1, 1.2, 1.5, 2.0)
AGGREGATE_SEED = "mean"


class MissingRunsError(ValueError):
    def __init__(self, missing: list[tuple[str, str]]):
        self.missing = missing
        listing = ", ".join(f"({i}, {a})" for i, a in missing)
        super().__init__(f"missing runs for (instance, algorithm) pairs: {listing}")


@dataclass
class Profile:
    algorithms: list[str]
    taus: list[float]
    fractions: list[list[float]]  # fractions[t][a]

    def at(self, tau: float) -> dict[str, float]:
        row = self.fractions[self.taus.index(tau)]
        return dict(zip(self.algorithms, row))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["tau", *self.algorithms])
            for tau, row in zip(self.taus, self.fractions):
                w.writerow([tau, *(f"{x:.6f}" for x in row)])


def mean_cuts(runs: Iterable[Mapping]) -> dict[tuple[str, str], Fraction]:
    """Arithmetic mean cut per (instance, algorithm); aggregate rows are skipped."""
    sums: dict[tuple[str, str], list] = defaultdict(lambda: [0, 0])
    for r in runs:
        if str(r.get("seed", "")) == AGGREGATE_SEED:
            continue
        acc = sums[(str(r["instance"]), str(r["algorithm"]))]
        acc[0] += Fraction(str(r["cut"]))
        acc[1] += 1
    return {key: s / c for key, (s, c) in sums.items()}


def performance_profile(runs: Iterable[Mapping], algorithms: Sequence[str] | None = None,
                        taus: Sequence[float] = DEFAULT_TAUS) -> Profile:
    """Profile table; every (instance, algorithm) pair must have a run."""
    cuts = mean_cuts(runs)
    instances = sorted({i for i, _ in cuts})
    if algorithms is None:
        algorithms = sorted({a for _, a in cuts})
    algorithms = list(algorithms)
    missing = [(i, a) for i in instances for a in algorithms if (i, a) not in cuts]
    if missing:
        raise MissingRunsError(missing)
    if any(t < 1 for t in taus):
        raise ValueError("tau values must be at least 1")
    best = {i: min(cuts[(i, a)] for a in algorithms) for i in instances}
    fractions = []
    for tau in taus:
        t = Fraction(str(tau))
        row = []
        for a in algorithms:
            hits = sum(1 for i in instances if cuts[(i, a)] <= t * best[i])
            row.append(hits / len(instances) if instances else 1.0)
        fractions.append(row)
    return Profile(algorithms, [float(t) for t in taus], fractions)


def load_runs(path, algorithm: str | None = None) -> list[dict]:
    """Rows of a run CSV; ``algorithm`` labels files that lack that column."""
    with open(Path(path), newline="") as f:
        rows = list(csv.DictReader(f))
    for r in rows:
        if algorithm is not None:
            r["algorithm"] = algorithm
        elif "algorithm" not in r:
            raise ValueError(f"{path}: no algorithm column and no label given")
    return rows
