"""Command-line entry point: ``mlpart {partition, profile, bench}``."""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path
from statistics import fmean

from .driver import REFINERS, ConfigError, RunConfig, partition
from .gain_table import MODES as GAIN_TABLE_MODES
from .graph import InfeasibleError, StructuralError
from .io import GraphFormatError, read_csrbin, read_graph, read_metis_compressed, write_partition
from .compression import MalformedEncodingError, compress_graph
from .profile import AGGREGATE_SEED, DEFAULT_TAUS, MissingRunsError, load_runs, performance_profile

CSV_HEADER = ["instance", "k", "seed", "cut", "imbalance", "time_total_s", "time_coarsen_s",
              "time_initial_s", "time_refine_s", "peak_aux_bytes", "compression_ratio"]
BENCH_KS = (8, 37, 64, 91, 128, 1000)


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {v}")
    return v


def _nonneg_int(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"must be non-negative, got {v}")
    return v


def _epsilon(text: str) -> float:
    v = float(text)
    if not v >= 0 or v == float("inf"):
        raise argparse.ArgumentTypeError(f"epsilon must be finite and non-negative, got {text}")
    return v


def _add_run_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--format", choices=("metis", "csrbin"), default="metis")
    sp.add_argument("--compress", choices=("on", "off"), default="off")
    sp.add_argument("--epsilon", type=_epsilon, default=0.03)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--repetitions", type=_positive_int, default=1)
    sp.add_argument("--workers", type=_positive_int, default=1)
    sp.add_argument("--gain-table", choices=GAIN_TABLE_MODES, default="sparse")
    sp.add_argument("--t-bump", type=_positive_int, default=10000)
    sp.add_argument("--rounds", type=_nonneg_int, default=5)
    sp.add_argument("--deterministic", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mlpart", description="Multilevel graph partitioner")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("partition", help="partition one graph")
    sp.add_argument("--graph", required=True, type=Path)
    sp.add_argument("--k", required=True, type=_positive_int)
    sp.add_argument("--refiner", choices=REFINERS, default="lp")
    sp.add_argument("--output", type=Path, help="partition file (best run)")
    sp.add_argument("--report", type=Path, help="CSV with one row per run")
    _add_run_flags(sp)

    sp = sub.add_parser("profile", help="performance profile from run CSVs")
    sp.add_argument("--run", action="append", required=True, metavar="LABEL=CSV",
                    help="runs of one algorithm; CSVs with an algorithm column may omit LABEL=")
    sp.add_argument("--tau", type=float, action="append", help="profile factors (repeatable)")
    sp.add_argument("--output", type=Path)

    sp = sub.add_parser("bench", help="run a grid of instances, k values and refiners")
    sp.add_argument("--graph", required=True, type=Path, action="append")
    sp.add_argument("--k", type=_positive_int, action="append")
    sp.add_argument("--refiner", choices=REFINERS, action="append")
    sp.add_argument("--output", type=Path, required=True, help="CSV of all runs")
    _add_run_flags(sp)
    return ap


def load_input(path: Path, fmt: str, compress: bool, workers: int):
    if compress and fmt == "metis":
        return read_metis_compressed(path, workers=workers)
    g = read_graph(path, fmt) if fmt == "metis" else read_csrbin(path)
    return compress_graph(g) if compress else g


def _config(args, k: int, seed: int, refiner: str) -> RunConfig:
    return RunConfig(k=k, epsilon=args.epsilon, seed=seed, workers=args.workers,
                     coarsening_rounds=args.rounds, refinement_rounds=args.rounds,
                     t_bump=args.t_bump, refiner=refiner, gain_table_mode=args.gain_table,
                     deterministic=args.deterministic)


def _row(instance: str, k: int, seed, report) -> dict:
    t = report.times
    return {"instance": instance, "k": k, "seed": seed, "cut": report.cut,
            "imbalance": f"{report.imbalance:.6f}", "time_total_s": f"{t['total']:.6f}",
            "time_coarsen_s": f"{t['coarsen']:.6f}", "time_initial_s": f"{t['initial']:.6f}",
            "time_refine_s": f"{t['refine']:.6f}", "peak_aux_bytes": report.peak_aux_bytes,
            "compression_ratio": f"{report.compression_ratio:.6f}"}


def aggregate_row(rows: list[dict]) -> dict:
    """Arithmetic mean of every numeric column; ``seed`` is set to ``mean``."""
    out = {"instance": rows[0]["instance"], "k": rows[0]["k"], "seed": AGGREGATE_SEED}
    for col in CSV_HEADER[3:]:
        out[col] = f"{fmean(float(r[col]) for r in rows):.6f}"
    return out


def _run_many(args, g, instance: str, k: int, refiner: str):
    rows, best = [], None
    for rep in range(args.repetitions):
        seed = args.seed + rep
        p, report = partition(g, _config(args, k, seed, refiner))
        rows.append(_row(instance, k, seed, report))
        if best is None or report.cut < best[1]:
            best = (p, report.cut)
    return rows, best[0]


def _write_csv(path: Path, rows: list[dict], header: list[str]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=header)
        w.writeheader()
        w.writerows(rows)


def cmd_partition(args) -> int:
    g = load_input(args.graph, args.format, args.compress == "on", args.workers)
    rows, best = _run_many(args, g, args.graph.stem, args.k, args.refiner)
    if args.repetitions > 1:
        rows.append(aggregate_row(rows))
    for r in rows:
        print(f"{r['instance']} k={r['k']} seed={r['seed']} cut={r['cut']} "
              f"imbalance={r['imbalance']} time={r['time_total_s']}s")
    if args.output:
        write_partition(args.output, best)
    if args.report:
        _write_csv(args.report, rows, CSV_HEADER)
    return 0


def cmd_bench(args) -> int:
    ks = args.k or list(BENCH_KS)
    refiners = args.refiner or ["lp", "lp+fm"]
    rows = []
    for path in args.graph:
        g = load_input(path, args.format, args.compress == "on", args.workers)
        for k in ks:
            if k > g.n:
                print(f"skipping {path.stem} k={k}: more blocks than vertices", file=sys.stderr)
                continue
            for refiner in refiners:
                runs, _ = _run_many(args, g, path.stem, k, refiner)
                runs.append(aggregate_row(runs))
                for r in runs:
                    r["algorithm"] = refiner
                rows.extend(runs)
                print(f"{path.stem} k={k} {refiner} mean cut={runs[-1]['cut']}")
    _write_csv(args.output, rows, CSV_HEADER + ["algorithm"])
    return 0


def cmd_profile(args) -> int:
    runs = []
    for spec in args.run:
        label, sep, path = spec.partition("=")
        runs.extend(load_runs(path, label) if sep else load_runs(label))
    # an instance is a (graph, k) pair
    for r in runs:
        r["instance"] = f"{r['instance']}:k={r.get('k', '')}"
    prof = performance_profile(runs, taus=args.tau or DEFAULT_TAUS)
    if args.output:
        prof.write_csv(args.output)
    w = csv.writer(sys.stdout)
    w.writerow(["tau", *prof.algorithms])
    for tau, row in zip(prof.taus, prof.fractions):
        w.writerow([tau, *(f"{x:.4f}" for x in row)])
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {"partition": cmd_partition, "profile": cmd_profile, "bench": cmd_bench}
    try:
        return handlers[args.command](args)
    except (OSError, GraphFormatError, MalformedEncodingError, StructuralError) as e:
        print(f"mlpart: cannot load input: {e}", file=sys.stderr)
        return 1
    except (ConfigError, InfeasibleError, MissingRunsError, ValueError) as e:
        print(f"mlpart: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
