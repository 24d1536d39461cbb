"""Command-line benchmark driver.

Subcommands mirror the four workloads (synthetic-local, synthetic-distributed,
stencil-local, stencil-distributed). Each run is repeated ``--repeat`` times
and the minimum wall time is reported; counters are seed-deterministic so
they agree across repeats. Results append to stdout and optionally to a CSV
with a fixed column schema; the ``ratio`` subcommand post-processes such a
CSV into two-column files for plotting overhead ratios.
"""

from __future__ import annotations

import argparse
import random
import sys

from . import bench, stencil
from .cluster import NetConfig
from .faults import CORRUPT, THROW, FaultSpec


def _fraction(text: str) -> float:
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError("error rate must be a fraction within [0, 1]")
    return value


def _id_list(text: str) -> tuple:
    if not text:
        return ()
    return tuple(int(part) for part in text.split(","))


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", default="none", help="resilience mode")
    p.add_argument("--n", type=int, default=3, help="replay attempts / replica count")
    p.add_argument("--error-rate", type=_fraction, default=0.0,
                   help="per-task failure probability, fraction in [0, 1]")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--repeat", type=int, default=3,
                   help="runs per configuration; the minimum wall time is kept")
    p.add_argument("--csv-out", default=None, help="write reports to this CSV file")


def _add_fault_placement(p: argparse.ArgumentParser) -> None:
    p.add_argument("--faulty-nodes", type=_id_list, default=(),
                   help="comma-separated locality ids failing at 10x the base rate")
    p.add_argument("--faulty-random", type=int, default=0, metavar="K",
                   help="instead pick K faulty localities from the seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="resilitask",
        description="Benchmarks for task replay/replication resilience.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synthetic-local", help="busy-wait tasks on one pool")
    p.add_argument("--tasks", type=int, default=20000)
    p.add_argument("--grain-us", type=int, default=200)
    p.add_argument("--cores", type=int, default=4)
    _add_common(p)

    p = sub.add_parser("synthetic-distributed", help="actions fanned over localities")
    p.add_argument("--localities", type=int, default=4)
    p.add_argument("--actions", type=int, default=200)
    p.add_argument("--tasks-per-action", type=int, default=50)
    p.add_argument("--grain-us", type=int, default=500)
    p.add_argument("--workers-per-locality", type=int, default=2)
    _add_common(p)
    _add_fault_placement(p)

    p = sub.add_parser("stencil-local", help="1D advection with dataflow tasks")
    p.add_argument("--subdomains", type=int, default=16)
    p.add_argument("--points", type=int, default=256)
    p.add_argument("--iterations", type=int, default=64)
    p.add_argument("--steps", type=int, default=8)
    p.add_argument("--courant", type=float, default=0.5)
    p.add_argument("--cores", type=int, default=4)
    p.add_argument("--fault-kind", choices=(THROW, CORRUPT), default=THROW)
    p.add_argument("--dump-grid", default=None, help="write the final grid snapshot here")
    _add_common(p)

    p = sub.add_parser("stencil-distributed", help="lockstep 1D advection over localities")
    p.add_argument("--subdomains", type=int, default=16)
    p.add_argument("--points", type=int, default=256)
    p.add_argument("--iterations", type=int, default=64)
    p.add_argument("--steps", type=int, default=8)
    p.add_argument("--courant", type=float, default=0.5)
    p.add_argument("--localities", type=int, default=4)
    p.add_argument("--local-n", type=int, default=3)
    p.add_argument("--backup-len", type=int, default=None)
    p.add_argument("--workers-per-locality", type=int, default=2)
    p.add_argument("--latency-us", type=float, default=0.0)
    p.add_argument("--per-byte-us", type=float, default=0.0)
    p.add_argument("--fault-kind", choices=(THROW, CORRUPT), default=THROW)
    p.add_argument("--dump-grid", default=None, help="write the final grid snapshot here")
    _add_common(p)
    _add_fault_placement(p)

    p = sub.add_parser("ratio", help="derive plot-friendly ratio files from a CSV")
    p.add_argument("--csv", required=True)
    p.add_argument("--x", required=True, help="column used as the x axis")
    p.add_argument("--mode", required=True, help="numerator mode")
    p.add_argument("--baseline", default="none", help="denominator mode")
    p.add_argument("--out", required=True)
    return parser


def _faulty_ids(args) -> tuple:
    if getattr(args, "faulty_random", 0):
        rng = random.Random(args.seed)
        return tuple(sorted(rng.sample(range(args.localities), args.faulty_random)))
    return tuple(getattr(args, "faulty_nodes", ()))


def _min_of(repeat: int, run):
    best = None
    for _ in range(max(1, repeat)):
        report = run()
        if best is None or report.wall_time_s < best.wall_time_s:
            best = report
    return best


def _dispatch(args) -> list:
    if args.command == "synthetic-local":
        report = _min_of(args.repeat, lambda: bench.run_synthetic_local(
            args.tasks, args.grain_us, args.cores, args.mode, args.n,
            args.error_rate, args.seed))
        return [report]

    if args.command == "synthetic-distributed":
        faulty = _faulty_ids(args)
        report = _min_of(args.repeat, lambda: bench.run_synthetic_distributed(
            args.localities, args.actions, args.tasks_per_action, args.grain_us,
            args.mode, args.n, args.error_rate, faulty, args.seed,
            args.workers_per_locality))
        return [report]

    config = stencil.StencilConfig(args.subdomains, args.points, args.iterations,
                                   args.steps, args.courant)

    if args.command == "stencil-local":
        fault = None
        if args.error_rate > 0:
            fault = FaultSpec(args.error_rate, frozenset(), 10.0, args.fault_kind, args.seed)

        def run():
            result = stencil.run_stencil_local(config, fault, args.mode, args.n,
                                               workers=args.cores)
            if args.dump_grid and result.grid is not None:
                stencil.dump_grid(args.dump_grid, result.grid, config, config.iterations)
            return bench.stencil_report("stencil-local", result, mode=args.mode,
                                        cores=args.cores, localities=1, n=args.n,
                                        error_rate=args.error_rate, seed=args.seed)

        return [_min_of(args.repeat, run)]

    if args.command == "stencil-distributed":
        faulty = _faulty_ids(args)
        fault = None
        if args.error_rate > 0:
            fault = FaultSpec(args.error_rate, frozenset(faulty), 10.0,
                              args.fault_kind, args.seed)
        net = NetConfig(args.latency_us, args.per_byte_us)

        def run():
            result = stencil.run_stencil_distributed(
                config, args.localities, fault, args.local_n, args.backup_len,
                args.workers_per_locality, net)
            if args.dump_grid and result.grid is not None:
                stencil.dump_grid(args.dump_grid, result.grid, config, config.iterations)
            return bench.stencil_report("stencil-distributed", result,
                                        mode=f"mixed-replay-{args.local_n}",
                                        cores=args.workers_per_locality,
                                        localities=args.localities, n=args.local_n,
                                        error_rate=args.error_rate,
                                        faulty_nodes=faulty, seed=args.seed)

        return [_min_of(args.repeat, run)]

    raise AssertionError(f"unhandled command {args.command}")


def _run_ratio(args) -> int:
    reports = bench.read_csv(args.csv)
    if args.x not in bench.CSV_COLUMNS:
        print(f"unknown x column {args.x!r}", file=sys.stderr)
        return 2
    base = {getattr(r, args.x): r.wall_time_s for r in reports if r.mode == args.baseline}
    rows = []
    for r in reports:
        if r.mode != args.mode:
            continue
        x = getattr(r, args.x)
        if x in base and base[x] > 0:
            rows.append((x, r.wall_time_s / base[x]))
    if not rows:
        print("no matching rows for the requested modes", file=sys.stderr)
        return 1
    bench.write_ratio_file(args.out, sorted(rows))
    print(f"wrote {len(rows)} ratio row(s) to {args.out}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "ratio":
        return _run_ratio(args)
    try:
        reports = _dispatch(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for r in reports:
        print(f"{r.benchmark} mode={r.mode} wall={r.wall_time_s:.4f}s "
              f"launched={r.tasks_launched} failures={r.failures} replays={r.replays} "
              f"replicas={r.replicas} remote={r.remote_invocations} "
              f"fallbacks={r.remote_fallbacks} bytes={r.bytes_moved}")
    if args.csv_out:
        bench.write_csv(reports, args.csv_out)
        print(f"wrote {len(reports)} report(s) to {args.csv_out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
