"""1D linear advection benchmark: Lax-Wendroff over partitioned subdomains.

The domain is the periodic unit interval. Each subdomain advances ``s``
time steps per iteration by reading an ``s``-wide ghost region from each
neighbor, so tasks only synchronize once per iteration. Output integrity is
checked with a physics-based checksum: a weight vector ``w`` (the adjoint of
``s`` stencil steps applied to the all-ones vector) satisfies
``sum(output) == w . extended_input`` exactly in real arithmetic, which turns
a single dot product over the inputs into an output validator.

Two drivers are provided: a dataflow version where every subdomain-iteration
is one task wrapped in a local resilience combinator, and a lockstep
multi-locality version where each locality computes its partition per
iteration, exchanges ghosts over channels, retries locally up to ``local_n``
times, and falls back to replaying the whole partition on backup localities.
"""

from __future__ import annotations

import struct
import threading
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import faults
from .cluster import NetConfig, spawn_localities
from .combinators import (ResilienceError, ResilienceMetrics, dataflow_replay,
                          dataflow_replay_validate, dataflow_replicate,
                          dataflow_replicate_validate, async_replay_validate,
                          replay_call)
from .distributed import DistributedMetrics, distributed_replay, make_backup_lists
from .engine import PoolConfig, TaskFuture, WorkerPool, current_attempt, \
    current_locality, dataflow, ready

DOMAIN_LENGTH = 1.0

MODES = ("none", "replay", "replay_validate", "replicate", "replicate_validate")


@dataclass(frozen=True)
class StencilConfig:
    subdomains: int
    points: int
    iterations: int
    steps_per_iteration: int
    courant: float = 0.5
    checksum_tolerance: float = 1e-9

    def __post_init__(self):
        if min(self.subdomains, self.points, self.iterations, self.steps_per_iteration) < 1:
            raise ValueError("all stencil sizes must be positive")
        if abs(self.courant) > 1.0:
            raise ValueError("|courant| must be <= 1 for stability")

    @property
    def total_points(self) -> int:
        return self.subdomains * self.points


@dataclass
class Subdomain:
    """One partition of the grid plus the checksum data its validator needs.

    ``checksum`` is the plain sum of ``values``; ``expected_checksum`` is the
    weight-vector prediction computed from the task inputs before the update,
    and ``scale`` the magnitude the comparison tolerance is relative to.
    """

    index: int
    values: np.ndarray
    checksum: float
    expected_checksum: float = 0.0
    scale: float = 0.0


def default_profile(x):
    return np.sin(2.0 * np.pi * x)


def analytic_solution(x, t: float, speed: float = 1.0, profile: Callable = default_profile):
    """Exact advection solution on the periodic unit domain."""
    return profile(np.mod(x - speed * t, DOMAIN_LENGTH))


def lax_wendroff_steps(extended: np.ndarray, steps: int, courant: float) -> np.ndarray:
    """Advance ``steps`` updates; the window shrinks one cell per side per step.

    Input length must be L + 2*steps for an L-point result.
    """
    u = np.asarray(extended, dtype=np.float64)
    if u.size < 2 * steps + 1:
        raise ValueError("extended window too short for the requested steps")
    c = courant
    if steps and c == 1.0:
        # Unit Courant number advects exactly one cell per step; a plain
        # shift keeps the identity exact in floating point as well.
        return np.array(u[:u.size - 2 * steps])
    if steps and c == -1.0:
        return np.array(u[2 * steps:])
    half_c = 0.5 * c
    half_c2 = 0.5 * c * c
    for _ in range(steps):
        u = u[1:-1] - half_c * (u[2:] - u[:-2]) + half_c2 * (u[2:] - 2.0 * u[1:-1] + u[:-2])
    return u


_weights_cache: dict = {}
_weights_lock = threading.Lock()


def checksum_weights(length: int, steps: int, courant: float) -> np.ndarray:
    """Weights ``w`` with ``w . extended == sum(lax_wendroff_steps(extended))``
    in exact arithmetic, for an ``length + 2*steps`` input window.

    Built by iterating the adjoint of the one-step stencil on the all-ones
    indicator of the output window; cached per (length, steps, courant).
    """
    key = (length, steps, float(courant))
    with _weights_lock:
        cached = _weights_cache.get(key)
    if cached is not None:
        return cached
    c = float(courant)
    coeff_left = 0.5 * c * c + 0.5 * c    # multiplies u[j-1]
    coeff_mid = 1.0 - c * c
    coeff_right = 0.5 * c * c - 0.5 * c   # multiplies u[j+1]
    w = np.ones(length, dtype=np.float64)
    for _ in range(steps):
        grown = np.zeros(w.size + 2, dtype=np.float64)
        grown[:-2] += coeff_left * w
        grown[1:-1] += coeff_mid * w
        grown[2:] += coeff_right * w
        w = grown
    w.setflags(write=False)
    with _weights_lock:
        _weights_cache[key] = w
    return w


def checksum_valid(sub: Subdomain, tolerance: float) -> bool:
    """The ABFT acceptance predicate for one computed subdomain."""
    return abs(sub.checksum - sub.expected_checksum) <= tolerance * sub.scale


def make_initial_grid(config: StencilConfig, profile: Callable = default_profile) -> list[Subdomain]:
    n = config.total_points
    x = np.arange(n, dtype=np.float64) / n
    u = np.asarray(profile(x), dtype=np.float64)
    subs = []
    for k in range(config.subdomains):
        values = u[k * config.points:(k + 1) * config.points].copy()
        total = float(values.sum())
        subs.append(Subdomain(k, values, total, total, float(np.abs(values).sum())))
    return subs


def subdomain_task(left: Subdomain, mine: Subdomain, right: Subdomain,
                   config: StencilConfig, fault: faults.FaultSpec | None = None,
                   task_id: int = 0, injections: "InjectionTally | None" = None) -> Subdomain:
    """Advance one subdomain by ``steps_per_iteration`` steps.

    Neighbors must each supply at least ``s`` ghost cells, i.e.
    ``points >= steps_per_iteration``. The expected checksum is taken from
    the inputs before the update; fault injection (if any) hits the output,
    so a corrupted result disagrees with the prediction.
    """
    s = config.steps_per_iteration
    if config.points < s:
        raise ValueError("neighbor subdomains must provide >= steps_per_iteration ghost cells")
    extended = np.concatenate([left.values[-s:], mine.values, right.values[:s]])
    weights = checksum_weights(config.points, s, config.courant)
    expected = float(weights @ extended)
    scale = float(np.abs(extended).sum())
    out = lax_wendroff_steps(extended, s, config.courant)
    if fault is not None:
        ctx = faults.FaultContext(current_locality(), task_id, current_attempt())
        if faults.sample_failure(fault, ctx):
            if injections is not None:
                injections.record()
            if fault.mode == faults.THROW:
                raise faults.SimulatedCorruption(
                    f"injected fault (task={task_id} attempt={ctx.attempt})")
            out = faults.flip_detectable_bit(out, fault, ctx)
    return Subdomain(mine.index, out, float(out.sum()), expected, scale)


class InjectionTally:
    """Thread-safe count of injected failures."""

    def __init__(self):
        self._lock = threading.Lock()
        self.count = 0

    def record(self):
        with self._lock:
            self.count += 1


@dataclass
class StencilRunResult:
    grid: np.ndarray | None
    aborted: bool
    completed_iterations: int
    wall_time_s: float
    counters: dict = field(default_factory=dict)
    error: str | None = None


def _flatten(subs: list[Subdomain]) -> np.ndarray:
    return np.concatenate([s.values for s in subs])


def run_stencil_local(config: StencilConfig, fault: faults.FaultSpec | None = None,
                      mode: str = "none", n: int = 1, workers: int = 2,
                      profile: Callable = default_profile, window: int = 8) -> StencilRunResult:
    """Dataflow driver: one task per subdomain per iteration, each depending
    on (left, mine, right) from the previous iteration.

    ``window`` bounds how many iterations of futures are in flight at once.
    Exhaustion of a resilience combinator aborts the run with a partial
    report.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    n_subs = config.subdomains
    metrics = ResilienceMetrics()
    injections = InjectionTally()
    validate = lambda sub: checksum_valid(sub, config.checksum_tolerance)  # noqa: E731

    with WorkerPool(PoolConfig(workers)) as pool:
        def spawn(deps, fn):
            if mode == "none":
                return dataflow(pool, deps, fn)
            if mode == "replay":
                return dataflow_replay(pool, n, deps, fn, metrics=metrics)
            if mode == "replay_validate":
                return dataflow_replay_validate(pool, n, validate, deps, fn, metrics=metrics)
            if mode == "replicate":
                return dataflow_replicate(pool, n, deps, fn, metrics=metrics)
            return dataflow_replicate_validate(pool, n, validate, deps, fn, metrics=metrics)

        start = time.perf_counter()
        current = [ready(sub) for sub in make_initial_grid(config, profile)]
        in_flight: list[tuple[int, list[TaskFuture]]] = []
        failed_iteration = None
        tasks_launched = 0

        def drain(futs) -> bool:
            for f in futs:
                if f.exception() is not None:
                    return False
            return True

        for it in range(config.iterations):
            nxt = []
            for k in range(n_subs):
                deps = [current[(k - 1) % n_subs], current[k], current[(k + 1) % n_subs]]
                task_id = it * n_subs + k
                fn = (lambda a, b, c, tid=task_id:
                      subdomain_task(a, b, c, config, fault, tid, injections))
                nxt.append(spawn(deps, fn))
            tasks_launched += n_subs
            in_flight.append((it, nxt))
            current = nxt
            if len(in_flight) > window:
                oldest_it, oldest = in_flight.pop(0)
                if not drain(oldest):
                    failed_iteration = oldest_it
                    break

        grid = None
        if failed_iteration is None:
            for pending_it, futs in in_flight:
                if not drain(futs):
                    failed_iteration = pending_it
                    break
            else:
                grid = _flatten([f.result() for f in current])
        if failed_iteration is not None:
            # Settle whatever is still in flight; errors have already been noted.
            for _, futs in in_flight:
                for f in futs:
                    f.exception()
        completed = config.iterations if failed_iteration is None else failed_iteration
        wall = time.perf_counter() - start

    counters = {
        "tasks_launched": tasks_launched,
        "failures_injected": injections.count,
        "replays": metrics.replays,
        "replicas": metrics.executions if mode.startswith("replicate") else 0,
        "validation_failures": metrics.validation_failures,
        "exhausted": metrics.exhausted,
        "remote_invocations": 0,
        "remote_fallbacks": 0,
        "bytes_moved": 0,
    }
    return StencilRunResult(grid, failed_iteration is not None, completed, wall, counters)


# -- distributed lockstep driver ------------------------------------------------


def _compute_block(ext: np.ndarray, task_id: int, points: int, steps: int,
                   courant: float, block_subs: int,
                   fault: faults.FaultSpec | None, injections: InjectionTally | None) -> np.ndarray:
    """Advance every subdomain of one locality partition for one iteration.

    ``ext`` is the partition plus ``steps`` ghost cells per side. Fault
    sampling happens once per attempt, keyed by the executing locality.
    """
    width = points + 2 * steps
    pieces = [lax_wendroff_steps(ext[k * points:k * points + width], steps, courant)
              for k in range(block_subs)]
    out = np.concatenate(pieces)
    if fault is not None:
        ctx = faults.FaultContext(current_locality(), task_id, current_attempt())
        if faults.sample_failure(fault, ctx):
            if injections is not None:
                injections.record()
            if fault.mode == faults.THROW:
                raise faults.SimulatedCorruption(
                    f"injected fault (task={task_id} attempt={ctx.attempt})")
            out = faults.flip_detectable_bit(out, fault, ctx)
    return out


def _block_validator(ext: np.ndarray, config: StencilConfig, block_subs: int) -> Callable:
    """Per-subdomain checksum predicate over a whole partition output."""
    points, s = config.points, config.steps_per_iteration
    width = points + 2 * s
    weights = checksum_weights(points, s, config.courant)

    def _ok(out: np.ndarray) -> bool:
        if not isinstance(out, np.ndarray) or out.size != block_subs * points:
            return False
        for k in range(block_subs):
            window = ext[k * points:k * points + width]
            expected = float(weights @ window)
            actual = float(out[k * points:(k + 1) * points].sum())
            if abs(actual - expected) > config.checksum_tolerance * float(np.abs(window).sum()):
                return False
        return True

    return _ok


def run_stencil_distributed(config: StencilConfig, localities: int,
                            fault: faults.FaultSpec | None = None, local_n: int = 3,
                            backup_len: int | None = None, workers_per_locality: int = 2,
                            net: NetConfig = NetConfig(),
                            profile: Callable = default_profile) -> StencilRunResult:
    """Lockstep driver over simulated localities.

    Per iteration each locality trades ``s``-wide ghost regions with its
    neighbors through channels, then computes its partition under local
    replay-with-validation. Only when local attempts are exhausted does the
    partition (with ghosts) travel to backup localities, where the remote
    handler applies the same local replay before answering.
    """
    if config.subdomains % localities != 0:
        raise ValueError("subdomains must divide evenly across localities")
    block_subs = config.subdomains // localities
    s = config.steps_per_iteration
    points = config.points
    if backup_len is None:
        backup_len = min(3, max(1, localities - 1))

    metrics = ResilienceMetrics()
    dmetrics = DistributedMetrics()
    injections = InjectionTally()
    fallbacks = InjectionTally()
    stop = threading.Event()
    errors: list[BaseException] = []
    blocks: list[np.ndarray | None] = [None] * localities
    done_iters = [0] * localities

    initial = _flatten(make_initial_grid(config, profile))

    with spawn_localities(localities, PoolConfig(workers_per_locality), net) as sim:
        def handler(ext, task_id):
            # Remote fallback path: same compute, same local replay policy,
            # executed inline so concurrent fallbacks cannot starve the pool.
            return replay_call(local_n, _block_validator(ext, config, block_subs),
                               _compute_block, ext, task_id, points, s, config.courant,
                               block_subs, fault, injections, metrics=metrics)

        sim.register_action("stencil-block", handler)
        right_ch = [sim.create_channel(r, (r + 1) % localities) for r in range(localities)]
        left_ch = [sim.create_channel(r, (r - 1) % localities) for r in range(localities)]

        def drive(rank: int):
            block = initial[rank * block_subs * points:(rank + 1) * block_subs * points].copy()
            try:
                for it in range(config.iterations):
                    if stop.is_set():
                        return
                    right_ch[rank].send(block[-s:])
                    left_ch[rank].send(block[:s])
                    left_ghost = right_ch[(rank - 1) % localities].recv().result()
                    right_ghost = left_ch[(rank + 1) % localities].recv().result()
                    ext = np.concatenate([left_ghost, block, right_ghost])
                    task_id = it * localities + rank
                    validate = _block_validator(ext, config, block_subs)
                    # Data args only in the closure; shared tallies must not
                    # be decay-copied with the task inputs.
                    compute = (lambda e=ext, t=task_id:
                               _compute_block(e, t, points, s, config.courant,
                                              block_subs, fault, injections))
                    try:
                        block = async_replay_validate(
                            sim.pool(rank), local_n, validate, compute,
                            metrics=metrics).result()
                    except ResilienceError:
                        fallbacks.record()
                        ids = make_backup_lists(rank, localities, backup_len)
                        # The remote handler applies the same replay-validate
                        # policy before answering and the simulated wire is
                        # reliable, so the reply needs no second validation.
                        block = distributed_replay(
                            sim, rank, ids, "stencil-block", ext, task_id,
                            metrics=dmetrics).result()
                    done_iters[rank] = it + 1
                blocks[rank] = block
            except BaseException as exc:
                errors.append(exc)
                stop.set()
                for ch in right_ch + left_ch:
                    ch.close()

        start = time.perf_counter()
        drivers = [threading.Thread(target=drive, args=(r,), name=f"stencil-drv{r}")
                   for r in range(localities)]
        for t in drivers:
            t.start()
        for t in drivers:
            t.join()
        wall = time.perf_counter() - start
        stats = sim.stats()

    aborted = bool(errors)
    grid = None if aborted else np.concatenate(blocks)
    counters = {
        "tasks_launched": localities * config.iterations,
        "failures_injected": injections.count,
        "replays": metrics.replays,
        "replicas": 0,
        "validation_failures": metrics.validation_failures,
        "exhausted": metrics.exhausted,
        "remote_invocations": stats["envelopes_sent"],
        "remote_fallbacks": fallbacks.count,
        "bytes_moved": stats["bytes_moved"],
    }
    return StencilRunResult(grid, aborted, min(done_iters), wall, counters,
                            error=repr(errors[0]) if errors else None)


# -- grid snapshots -------------------------------------------------------------

_SNAPSHOT_HEADER = struct.Struct("<QQQ")


def dump_grid(path, grid: np.ndarray, config: StencilConfig, iteration: int) -> None:
    """Write a snapshot: [u64 subdomains][u64 points][u64 iteration] + f64 data."""
    data = np.ascontiguousarray(grid, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(_SNAPSHOT_HEADER.pack(config.subdomains, config.points, iteration))
        fh.write(data.tobytes())


def load_grid(path) -> tuple[np.ndarray, int, int, int]:
    """Read a snapshot; returns (grid, subdomains, points, iteration)."""
    with open(path, "rb") as fh:
        subdomains, points, iteration = _SNAPSHOT_HEADER.unpack(fh.read(_SNAPSHOT_HEADER.size))
        grid = np.frombuffer(fh.read(), dtype="<f8").copy()
    if grid.size != subdomains * points:
        raise ValueError("snapshot payload does not match its header")
    return grid, subdomains, points, iteration
