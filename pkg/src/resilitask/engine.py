"""Minimal asynchronous task substrate: a worker pool producing awaitable
futures, plus a dataflow join over futures.

Everything else in this package is built on two primitives:

* ``WorkerPool.submit(fn, *args)`` runs a closure exactly once on some worker
  and returns a :class:`TaskFuture`.
* ``dataflow(pool, deps, fn)`` runs ``fn`` over the resolved values of ``deps``
  once all of them have resolved successfully.

Task exceptions never unwind across worker threads; they are captured inside
the future and re-raised at the await site.
"""

from __future__ import annotations

import copy
import hashlib
import threading
import time
from dataclasses import dataclass
from queue import SimpleQueue
from typing import Any, Callable, Sequence


@dataclass(frozen=True)
class PoolConfig:
    """Worker pool sizing. ``worker_count`` is the number of OS threads."""

    worker_count: int = 2

    def __post_init__(self):
        if self.worker_count < 1:
            raise ValueError("worker_count must be >= 1")


class _ExecutionContext(threading.local):
    # Class attributes double as per-thread defaults: a task running outside
    # any resilience combinator sees attempt 1, and a pool not owned by a
    # simulated locality reports locality 0.
    attempt = 1
    locality = 0


_context = _ExecutionContext()


def current_attempt() -> int:
    """Attempt number (1-based) of the task currently running on this thread."""
    return _context.attempt


def current_locality() -> int:
    """Rank of the locality whose pool is running the current task."""
    return _context.locality


class TaskFuture:
    """Handle to a pending-or-completed task.

    A future resolves exactly once, with either a value or an error. Awaiting
    a completed future is idempotent. Both blocking await (:meth:`result`)
    and callback chaining (:meth:`add_done_callback`) are supported, and the
    object may be shared freely between threads.
    """

    __slots__ = ("_lock", "_event", "_value", "_error", "_resolved",
                 "_callbacks", "attempts", "winner_index", "succeeded_rank")

    def __init__(self):
        self._lock = threading.Lock()
        self._event = threading.Event()
        self._value = None
        self._error = None
        self._resolved = False
        self._callbacks = []
        # Optional metadata filled in by resilience combinators.
        self.attempts = None
        self.winner_index = None
        self.succeeded_rank = None

    def done(self) -> bool:
        return self._resolved

    def wait(self, timeout: float | None = None) -> bool:
        """Block until resolved (or timeout). Returns True when resolved."""
        return self._event.wait(timeout)

    def result(self, timeout: float | None = None):
        """Block for the outcome; returns the value or raises the task error."""
        if not self._event.wait(timeout):
            raise TimeoutError("task did not resolve within timeout")
        if self._error is not None:
            raise self._error
        return self._value

    def exception(self, timeout: float | None = None):
        """Block for the outcome; returns the captured error or None."""
        if not self._event.wait(timeout):
            raise TimeoutError("task did not resolve within timeout")
        return self._error

    def add_done_callback(self, fn: Callable[["TaskFuture"], None]) -> None:
        """Run ``fn(self)`` once resolved; immediately if already resolved."""
        with self._lock:
            if not self._resolved:
                self._callbacks.append(fn)
                return
        fn(self)

    # -- resolution (package-internal) ------------------------------------

    def _finish(self, value, error) -> None:
        with self._lock:
            if self._resolved:
                raise RuntimeError("future already resolved")
            self._value = value
            self._error = error
            self._resolved = True
            callbacks, self._callbacks = self._callbacks, []
            self._event.set()
        for fn in callbacks:
            fn(self)

    def _resolve(self, value) -> None:
        self._finish(value, None)

    def _reject(self, error: BaseException) -> None:
        self._finish(None, error)


def ready(value) -> TaskFuture:
    """A future already resolved with ``value``."""
    fut = TaskFuture()
    fut._resolve(value)
    return fut


def failed(error: BaseException) -> TaskFuture:
    """A future already resolved with ``error``."""
    fut = TaskFuture()
    fut._reject(error)
    return fut


class WorkerPool:
    """Fixed-size thread pool running submitted closures.

    Each task body runs on exactly one worker without migration. Shutdown
    drains every task submitted before it; submitting afterwards raises.
    """

    def __init__(self, config: PoolConfig | int = PoolConfig(), locality: int = 0):
        if isinstance(config, int):
            config = PoolConfig(config)
        self.config = config
        self.locality = locality
        self._queue: SimpleQueue = SimpleQueue()
        self._closed = False
        self._workers = [
            threading.Thread(target=self._worker_loop, name=f"pool-{locality}-w{i}", daemon=True)
            for i in range(config.worker_count)
        ]
        for t in self._workers:
            t.start()

    def _worker_loop(self):
        _context.locality = self.locality
        while True:
            item = self._queue.get()
            if item is None:
                return
            fut, fn, args, kwargs = item
            if fut is None:
                # Raw mode: fn manages its own promise; never let an escaped
                # exception kill the worker.
                try:
                    fn()
                except BaseException:
                    pass
                continue
            try:
                value = fn(*args, **kwargs)
            except BaseException as exc:
                fut._reject(exc)
            else:
                fut._resolve(value)

    def submit(self, fn: Callable[..., Any], *args, **kwargs) -> TaskFuture:
        """Run ``fn(*args, **kwargs)`` exactly once on some worker."""
        if self._closed:
            raise RuntimeError("pool is shut down")
        fut = TaskFuture()
        self._queue.put((fut, fn, args, kwargs))
        return fut

    def _spawn(self, fn: Callable[[], None]) -> None:
        # Internal: enqueue a self-resolving runner (used by combinators).
        if self._closed:
            raise RuntimeError("pool is shut down")
        self._queue.put((None, fn, (), {}))

    def shutdown(self) -> None:
        """Finish all in-flight tasks and join the workers. Idempotent."""
        if self._closed:
            return
        self._closed = True
        for _ in self._workers:
            self._queue.put(None)
        for t in self._workers:
            t.join()

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.shutdown()
        return False


def _when_all(deps: Sequence[TaskFuture], on_ready: Callable[[BaseException | None, list | None], None]) -> None:
    """Invoke ``on_ready`` once every dep resolved.

    Called with (None, values) on all-success, else (first error in dep
    order, None). Runs on whichever thread completes the last dependency.
    """
    remaining = [len(deps)]
    lock = threading.Lock()

    def _one_done(_fut):
        with lock:
            remaining[0] -= 1
            if remaining[0]:
                return
        for d in deps:
            err = d._error
            if err is not None:
                on_ready(err, None)
                return
        on_ready(None, [d._value for d in deps])

    for d in deps:
        d.add_done_callback(_one_done)


def dataflow(pool: WorkerPool, deps: Sequence[TaskFuture], fn: Callable[..., Any]) -> TaskFuture:
    """Run ``fn`` over the resolved values of ``deps``.

    The continuation starts only after every dependency resolved
    successfully and receives decayed (deep) copies of the resolved values.
    If any dependency resolved to an error the continuation is skipped and
    the first error (in dependency order) propagates.
    """
    if not deps:
        raise ValueError("dataflow requires at least one dependency")
    out = TaskFuture()

    def _fire(err, values):
        if err is not None:
            out._reject(err)
            return

        def _run():
            try:
                value = fn(*[copy.deepcopy(v) for v in values])
            except BaseException as exc:
                out._reject(exc)
            else:
                out._resolve(value)

        pool._spawn(_run)

    _when_all(deps, _fire)
    return out


def wait_all(futures: Sequence[TaskFuture]) -> list:
    """Blocking await of every future, in order. Raises the first error met."""
    return [f.result() for f in futures]


# Busy-wait grain emulation for benchmark workloads. Hashing a >=2 KiB
# buffer makes CPython drop the GIL, so concurrently spinning workers
# occupy distinct cores instead of serializing on the interpreter lock.
# The chunk is sized so one hash lasts ~15us: long enough to keep GIL
# handoff traffic low, short enough to land near the requested grain.
_SPIN_BUF = b"\x5a" * 16384


def busy_wait_us(grain_us: float) -> int:
    """Occupy the CPU for roughly ``grain_us`` microseconds; returns spin count."""
    deadline = time.perf_counter_ns() + int(grain_us * 1000)
    spins = 0
    while time.perf_counter_ns() < deadline:
        hashlib.sha256(_SPIN_BUF)
        spins += 1
    return spins
