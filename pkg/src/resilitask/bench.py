"""Synthetic benchmark workloads and machine-readable run reports.

The synthetic workloads imitate an application with tunable task count and
grain size: every task busy-waits for its grain and then consults the fault
model. The local variant drives a single worker pool through a resilient
executor; the distributed variant fans actions out over simulated
localities, each action running a batch of grains on its target locality.

Reports carry the counters behind overhead-ratio plots and serialize to a
fixed-schema CSV.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, fields
from typing import Sequence

from . import faults
from .cluster import NetConfig, spawn_localities
from .combinators import (REPLAY, REPLICATE, ResilienceError, ResilienceMetrics,
                          majority_vote, make_resilient_executor)
from .distributed import (DistributedMetrics, distributed_replay,
                          distributed_replicate, distributed_replicate_validate,
                          distributed_replicate_vote, distributed_replicate_vote_validate,
                          distributed_replay_validate)
from .engine import PoolConfig, WorkerPool, busy_wait_us, current_attempt, current_locality
from .stencil import InjectionTally, StencilRunResult

SYNTHETIC_MODES = ("none", "replay", "replay_validate", "replicate",
                   "replicate_validate", "replicate_vote", "replicate_vote_validate")

CSV_COLUMNS = ("benchmark", "mode", "cores", "localities", "tasks", "grain_us",
               "n", "error_rate", "faulty_nodes", "seed", "wall_time_s",
               "tasks_launched", "failures", "replays", "replicas",
               "remote_invocations", "remote_fallbacks", "bytes_moved")


@dataclass
class RunReport:
    benchmark: str
    mode: str
    cores: int
    localities: int
    tasks: int
    grain_us: int
    n: int
    error_rate: float
    faulty_nodes: tuple = ()
    seed: int = 0
    wall_time_s: float = 0.0
    tasks_launched: int = 0
    failures: int = 0
    replays: int = 0
    replicas: int = 0
    remote_invocations: int = 0
    remote_fallbacks: int = 0
    bytes_moved: int = 0


def _executor_for(pool, mode, n, metrics):
    validate = (lambda r: r >= 0)
    if mode == "none":
        return pool
    if mode == "replay":
        return make_resilient_executor(pool, REPLAY, n, metrics=metrics)
    if mode == "replay_validate":
        return make_resilient_executor(pool, REPLAY, n, validate=validate, metrics=metrics)
    if mode == "replicate":
        return make_resilient_executor(pool, REPLICATE, n, metrics=metrics)
    if mode == "replicate_validate":
        return make_resilient_executor(pool, REPLICATE, n, validate=validate, metrics=metrics)
    if mode == "replicate_vote":
        return make_resilient_executor(pool, REPLICATE, n, vote=majority_vote, metrics=metrics)
    if mode == "replicate_vote_validate":
        return make_resilient_executor(pool, REPLICATE, n, validate=validate,
                                       vote=majority_vote, metrics=metrics)
    raise ValueError(f"unknown mode {mode!r}")


def run_synthetic_local(tasks: int, grain_us: int, cores: int, mode: str = "none",
                        n: int = 1, error_rate: float = 0.0, seed: int = 0) -> RunReport:
    """Busy-wait tasks through the chosen combinator on one pool.

    Exhausted invocations are counted, not fatal. Wall time excludes pool
    startup and shutdown.
    """
    if min(tasks, grain_us, cores, n) < 1:
        raise ValueError("tasks, grain_us, cores, and n must be positive")
    spec = faults.FaultSpec(base_rate=error_rate, seed=seed)
    tally = InjectionTally()
    inject_faults = error_rate > 0.0

    def grain_task(task_id: int) -> int:
        busy_wait_us(grain_us)
        if inject_faults:
            ctx = faults.FaultContext(current_locality(), task_id, current_attempt())
            if faults.sample_failure(spec, ctx):
                tally.record()
                raise faults.SimulatedCorruption(f"injected fault (task={task_id})")
        return task_id

    metrics = ResilienceMetrics()
    with WorkerPool(PoolConfig(cores)) as pool:
        executor = _executor_for(pool, mode, n, metrics)
        start = time.perf_counter()
        futures = [executor.submit(grain_task, i) for i in range(tasks)]
        exhausted = 0
        for fut in futures:
            try:
                fut.result()
            except ResilienceError:
                exhausted += 1  # sentinel: failure already tallied per injection
        wall = time.perf_counter() - start

    if mode == "none":
        launched = tasks
        replays = replicas = 0
    elif mode.startswith("replay"):
        launched = tasks + metrics.replays
        replays, replicas = metrics.replays, 0
    else:
        launched = metrics.executions
        replays, replicas = 0, metrics.executions
    return RunReport(
        benchmark="synthetic-local", mode=mode, cores=cores, localities=1,
        tasks=tasks, grain_us=grain_us, n=n, error_rate=error_rate,
        faulty_nodes=(), seed=seed, wall_time_s=wall, tasks_launched=launched,
        failures=tally.count, replays=replays, replicas=replicas,
        remote_invocations=0, remote_fallbacks=0, bytes_moved=0)


def run_synthetic_distributed(localities: int, actions: int, tasks_per_action: int,
                              grain_us: int, mode: str = "none", n: int = 1,
                              error_rate: float = 0.0, faulty_ids: Sequence[int] = (),
                              seed: int = 0, workers_per_locality: int = 2,
                              net: NetConfig = NetConfig()) -> RunReport:
    """Fan ``actions`` out round-robin over localities; each action runs a
    batch of grain tasks on the locality executing it.

    Replay walks the next localities by rank when the target fails (the
    deliberately unbalanced scheme); replicate invokes ``n`` localities
    concurrently. Any task failure inside a batch fails the whole action.
    """
    if localities < 1:
        raise ValueError("need at least one locality")
    if mode not in SYNTHETIC_MODES:
        raise ValueError(f"unknown mode {mode!r}")
    spec = faults.FaultSpec(base_rate=error_rate, faulty_localities=frozenset(faulty_ids),
                            seed=seed)
    tally = InjectionTally()
    inject_faults = error_rate > 0.0
    validate = (lambda r: r >= 0)

    def action_batch(action_id: int, count: int, grain: int) -> int:
        here = current_locality()
        for i in range(count):
            busy_wait_us(grain)
            if inject_faults:
                ctx = faults.FaultContext(here, action_id * count + i, current_attempt())
                if faults.sample_failure(spec, ctx):
                    tally.record()
                    raise faults.SimulatedCorruption(
                        f"injected fault (action={action_id} task={i})")
        return action_id

    dmetrics = DistributedMetrics()
    with spawn_localities(localities, PoolConfig(workers_per_locality), net) as sim:
        sim.register_action("grain-batch", action_batch)
        width = min(n, localities) if mode != "none" else 1
        start = time.perf_counter()
        futures = []
        for a in range(actions):
            target = a % localities
            ids = [(target + j) % localities for j in range(width)]
            args = (a, tasks_per_action, grain_us)
            if mode == "none":
                fut = sim.remote_invoke(0, target, "grain-batch", *args)
            elif mode == "replay":
                fut = distributed_replay(sim, 0, ids, "grain-batch", *args, metrics=dmetrics)
            elif mode == "replay_validate":
                fut = distributed_replay_validate(sim, 0, ids, validate, "grain-batch",
                                                  *args, metrics=dmetrics)
            elif mode == "replicate":
                fut = distributed_replicate(sim, 0, ids, "grain-batch", *args, metrics=dmetrics)
            elif mode == "replicate_validate":
                fut = distributed_replicate_validate(sim, 0, ids, validate, "grain-batch",
                                                     *args, metrics=dmetrics)
            elif mode == "replicate_vote":
                fut = distributed_replicate_vote(sim, 0, ids, majority_vote, "grain-batch",
                                                 *args, metrics=dmetrics)
            else:
                fut = distributed_replicate_vote_validate(sim, 0, ids, majority_vote, validate,
                                                          "grain-batch", *args, metrics=dmetrics)
            futures.append(fut)
        exhausted = 0
        for fut in futures:
            try:
                fut.result()
            except (ResilienceError, faults.SimulatedCorruption, Exception):
                exhausted += 1
        wall = time.perf_counter() - start
        stats = sim.stats()

    invocations = stats["envelopes_sent"]
    return RunReport(
        benchmark="synthetic-distributed", mode=mode, cores=workers_per_locality,
        localities=localities, tasks=actions * tasks_per_action, grain_us=grain_us,
        n=n, error_rate=error_rate, faulty_nodes=tuple(sorted(faulty_ids)), seed=seed,
        wall_time_s=wall,
        tasks_launched=invocations * tasks_per_action,
        failures=tally.count,
        replays=dmetrics.fallbacks if mode.startswith("replay") else 0,
        replicas=invocations if mode.startswith("replicate") else 0,
        remote_invocations=invocations,
        remote_fallbacks=dmetrics.fallbacks,
        bytes_moved=stats["bytes_moved"])


def stencil_report(benchmark: str, result: StencilRunResult, *, mode: str, cores: int,
                   localities: int, n: int, error_rate: float,
                   faulty_nodes: Sequence[int] = (), seed: int = 0,
                   grain_us: int = 0) -> RunReport:
    """Adapt a stencil run result to the common report schema."""
    c = result.counters
    return RunReport(
        benchmark=benchmark, mode=mode, cores=cores, localities=localities,
        tasks=c.get("tasks_launched", 0), grain_us=grain_us, n=n,
        error_rate=error_rate, faulty_nodes=tuple(sorted(faulty_nodes)), seed=seed,
        wall_time_s=result.wall_time_s,
        tasks_launched=c.get("tasks_launched", 0) + c.get("replays", 0),
        failures=c.get("failures_injected", 0),
        replays=c.get("replays", 0),
        replicas=c.get("replicas", 0),
        remote_invocations=c.get("remote_invocations", 0),
        remote_fallbacks=c.get("remote_fallbacks", 0),
        bytes_moved=c.get("bytes_moved", 0))


# -- CSV ------------------------------------------------------------------------


def _row(report: RunReport) -> list:
    row = []
    for name in CSV_COLUMNS:
        value = getattr(report, name)
        if name == "faulty_nodes":
            value = ";".join(str(v) for v in value)
        row.append(value)
    return row


def write_csv(reports: Sequence[RunReport], path) -> None:
    """Fixed schema: header plus one row per run."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for report in reports:
            writer.writerow(_row(report))


def read_csv(path) -> list[RunReport]:
    """Inverse of :func:`write_csv`, restoring field types."""
    types = {f.name: f.type for f in fields(RunReport)}
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != list(CSV_COLUMNS):
            raise ValueError("unexpected CSV schema")
        for raw in reader:
            kwargs = {}
            for name in CSV_COLUMNS:
                text = raw[name]
                if name == "faulty_nodes":
                    kwargs[name] = tuple(int(v) for v in text.split(";") if v != "")
                elif types[name] in ("int", int):
                    kwargs[name] = int(text)
                elif types[name] in ("float", float):
                    kwargs[name] = float(text)
                else:
                    kwargs[name] = text
            out.append(RunReport(**kwargs))
    return out


def write_ratio_file(path, rows: Sequence[tuple]) -> None:
    """Two-column (x, ratio) text file, plot-tool friendly."""
    with open(path, "w") as fh:
        for x, ratio in rows:
            fh.write(f"{x} {ratio:.6f}\n")
