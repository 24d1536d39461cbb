"""Local resilience combinators: task replay and task replication.

Replay retries a failing task sequentially, up to ``n`` total attempts (the
first execution counts as attempt 1), optionally gating success on a
``validate`` predicate. Replicate launches ``n`` concurrent copies and picks
a result by first-success, first-validated, or a vote over all completed
replicas; replicas always run to completion, never cancelled.

Arguments are captured as decayed (deep) copies at invocation, so later
mutation by the caller cannot leak into retries or replicas. Task bodies are
assumed not to mutate their own inputs.
"""

from __future__ import annotations

import copy
import threading
from collections import Counter
from typing import Callable, Sequence

from .engine import TaskFuture, WorkerPool, _context, _when_all

EXHAUSTED_WITH_EXCEPTION = "exhausted_with_exception"
EXHAUSTED_WITH_INVALID_RESULT = "exhausted_with_invalid_result"
NO_VALID_REPLICA = "no_valid_replica"


class ResilienceError(Exception):
    """All attempts of a resilient invocation failed.

    ``kind`` tells crash detection (exceptions) apart from SDC detection
    (validation failures); ``attempts`` is how many executions ran;
    ``last_error`` carries the final exception when there was one.
    """

    def __init__(self, kind: str, attempts: int, last_error: BaseException | None = None):
        self.kind = kind
        self.attempts = attempts
        self.last_error = last_error
        detail = f": {last_error!r}" if last_error is not None else ""
        super().__init__(f"{kind} after {attempts} attempt(s){detail}")


class ResilienceMetrics:
    """Thread-safe counters shared by combinator invocations."""

    def __init__(self):
        self._lock = threading.Lock()
        self.invocations = 0
        self.executions = 0
        self.replays = 0
        self.exceptions_caught = 0
        self.validation_failures = 0
        self.exhausted = 0

    def _record(self, executions, replays, exceptions, invalid, exhausted):
        with self._lock:
            self.invocations += 1
            self.executions += executions
            self.replays += replays
            self.exceptions_caught += exceptions
            self.validation_failures += invalid
            self.exhausted += exhausted


def majority_vote(candidates: Sequence):
    """Default consensus: most frequent value by equality, ties resolved in
    favor of the earliest replica index. Works on unhashable values."""
    if not candidates:
        raise ValueError("majority_vote needs at least one candidate")
    try:
        counts = Counter(candidates)
    except TypeError:
        # Unhashable results (arrays, lists): group by pairwise equality.
        best = None
        best_count = 0
        for value in candidates:
            count = 0
            for other in candidates:
                eq = other == value
                count += bool(eq if isinstance(eq, bool) else all(eq))
            if count > best_count:
                best, best_count = value, count
        return best
    top = max(counts.values())
    return next(value for value in candidates if counts[value] == top)


# Immutable atoms need no decayed copy; skipping deepcopy for them keeps the
# per-invocation overhead in the sub-microsecond range that the overhead
# benchmarks rely on.
_ATOMIC = (int, float, bool, complex, str, bytes, type(None), frozenset)


def _copy_args(args: tuple) -> tuple:
    if not args or all(isinstance(a, _ATOMIC) for a in args):
        return args
    return copy.deepcopy(args)


def _copy_kwargs(kwargs: dict) -> dict:
    if not kwargs or all(isinstance(v, _ATOMIC) for v in kwargs.values()):
        return kwargs
    return copy.deepcopy(kwargs)


def _decayed(args: tuple, kwargs: dict):
    return _copy_args(args), _copy_kwargs(kwargs)


# -- replay -----------------------------------------------------------------


def _spawn_replay(pool, out, n, validate, fn, args, kwargs, metrics):
    def _run():
        last_exc = None
        invalid_last = False
        exceptions = 0
        invalid = 0
        for attempt in range(1, n + 1):
            _context.attempt = attempt
            try:
                value = fn(*args, **kwargs)
            except BaseException as exc:
                last_exc, invalid_last = exc, False
                exceptions += 1
                continue
            finally:
                _context.attempt = 1
            if validate is None or validate(value):
                out.attempts = attempt
                if metrics is not None:
                    metrics._record(attempt, attempt - 1, exceptions, invalid, 0)
                out._resolve(value)
                return
            last_exc, invalid_last = None, True
            invalid += 1
        out.attempts = n
        if metrics is not None:
            metrics._record(n, n - 1, exceptions, invalid, 1)
        kind = EXHAUSTED_WITH_INVALID_RESULT if invalid_last else EXHAUSTED_WITH_EXCEPTION
        out._reject(ResilienceError(kind, n, last_exc))

    pool._spawn(_run)


def async_replay(pool: WorkerPool, n: int, task: Callable, *args,
                 metrics: ResilienceMetrics | None = None, **kwargs) -> TaskFuture:
    """Run ``task`` until it returns without raising, at most ``n`` attempts."""
    if n < 1:
        raise ValueError("n must be >= 1")
    out = TaskFuture()
    a, kw = _decayed(args, kwargs)
    _spawn_replay(pool, out, n, None, task, a, kw, metrics)
    return out


def async_replay_validate(pool: WorkerPool, n: int, validate: Callable, task: Callable,
                          *args, metrics: ResilienceMetrics | None = None, **kwargs) -> TaskFuture:
    """Replay where an attempt succeeds only if it raises nothing and
    ``validate(result)`` holds."""
    if n < 1:
        raise ValueError("n must be >= 1")
    out = TaskFuture()
    a, kw = _decayed(args, kwargs)
    _spawn_replay(pool, out, n, validate, task, a, kw, metrics)
    return out


def replay_call(n: int, validate: Callable | None, fn: Callable, *args,
                metrics: ResilienceMetrics | None = None, **kwargs):
    """Synchronous replay on the calling thread: returns the first accepted
    value or raises :class:`ResilienceError`.

    Useful inside action handlers, where spawning onto the handler's own
    pool could exhaust its workers.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    last_exc = None
    invalid_last = False
    exceptions = 0
    invalid = 0
    for attempt in range(1, n + 1):
        _context.attempt = attempt
        try:
            value = fn(*args, **kwargs)
        except Exception as exc:
            last_exc, invalid_last = exc, False
            exceptions += 1
            continue
        finally:
            _context.attempt = 1
        if validate is None or validate(value):
            if metrics is not None:
                metrics._record(attempt, attempt - 1, exceptions, invalid, 0)
            return value
        last_exc, invalid_last = None, True
        invalid += 1
    if metrics is not None:
        metrics._record(n, n - 1, exceptions, invalid, 1)
    kind = EXHAUSTED_WITH_INVALID_RESULT if invalid_last else EXHAUSTED_WITH_EXCEPTION
    raise ResilienceError(kind, n, last_exc)


# -- replicate ----------------------------------------------------------------


def _spawn_replicate(pool, out, n, validate, vote, fn, args, kwargs, metrics):
    # args/kwargs are the retained decayed copies; every replica re-copies
    # them so replicas can never observe each other's mutations.
    lock = threading.Lock()
    state = {"pending": n, "resolved": False, "exceptions": 0, "invalid": 0}
    outcomes = [None] * n  # (ok, value) per replica index; ok None = invalid
    voting = vote is not None

    def _reject_no_replica():
        last_exc = None
        for ok, value in reversed(outcomes):
            if ok is False:
                last_exc = value
                break
        out.attempts = n
        out._reject(ResilienceError(NO_VALID_REPLICA, n, last_exc))

    def _replica(index):
        def _run():
            _context.attempt = index + 1
            try:
                value = fn(*_copy_args(args), **_copy_kwargs(kwargs))
            except BaseException as exc:
                ok, value = False, exc
            else:
                ok = True
                if validate is not None and not validate(value):
                    ok = None
            finally:
                _context.attempt = 1

            finish = None
            with lock:
                outcomes[index] = (ok, value)
                state["pending"] -= 1
                if ok is None:
                    state["invalid"] += 1
                elif ok is False:
                    state["exceptions"] += 1
                done = state["pending"] == 0
                if not voting and ok is True and not state["resolved"]:
                    state["resolved"] = True
                    finish = ("win", value, n - state["pending"], index)
                elif done and not state["resolved"]:
                    state["resolved"] = True
                    finish = ("vote",) if voting else ("fail",)
                if done and metrics is not None:
                    won = finish is None or finish[0] == "win" or (
                        finish[0] == "vote" and any(o[0] is True for o in outcomes))
                    metrics._record(n, 0, state["exceptions"], state["invalid"],
                                    0 if won else 1)

            if finish is None:
                return
            if finish[0] == "win":
                out.attempts = finish[2]
                out.winner_index = finish[3]
                out._resolve(finish[1])
            elif finish[0] == "fail":
                _reject_no_replica()
            else:
                candidates = [v for ok_, v in outcomes if ok_ is True]
                if not candidates:
                    _reject_no_replica()
                    return
                out.attempts = n
                try:
                    out._resolve(vote(candidates))
                except BaseException as exc:
                    out._reject(exc)

        return _run

    for i in range(n):
        pool._spawn(_replica(i))


def _replicate(pool, n, task, args, kwargs, validate, vote, metrics):
    if n < 1:
        raise ValueError("n must be >= 1")
    out = TaskFuture()
    base_args, base_kwargs = _decayed(args, kwargs)
    _spawn_replicate(pool, out, n, validate, vote, task, base_args, base_kwargs, metrics)
    return out


def async_replicate(pool, n, task, *args, metrics=None, **kwargs) -> TaskFuture:
    """Launch ``n`` concurrent replicas; first one finishing without an
    exception wins (ties by lowest replica index)."""
    return _replicate(pool, n, task, args, kwargs, None, None, metrics)


def async_replicate_validate(pool, n, validate, task, *args, metrics=None, **kwargs) -> TaskFuture:
    """Replicate where the winner must also pass ``validate``."""
    return _replicate(pool, n, task, args, kwargs, validate, None, metrics)


def async_replicate_vote(pool, n, vote, task, *args, metrics=None, **kwargs) -> TaskFuture:
    """Wait for all ``n`` replicas and apply ``vote`` to every result that
    completed without an exception (replica-index order)."""
    return _replicate(pool, n, task, args, kwargs, None, vote or majority_vote, metrics)


def async_replicate_vote_validate(pool, n, vote, validate, task, *args, metrics=None, **kwargs) -> TaskFuture:
    """Voting replicate with candidates pre-filtered by ``validate``."""
    return _replicate(pool, n, task, args, kwargs, validate, vote or majority_vote, metrics)


# -- dataflow variants --------------------------------------------------------


def _dataflow_resilient(pool, deps, launch):
    if not deps:
        raise ValueError("at least one dependency is required")
    out = TaskFuture()

    def _fire(err, values):
        if err is not None:
            out._reject(err)
            return
        launch(out, [copy.deepcopy(v) for v in values])

    _when_all(deps, _fire)
    return out


def dataflow_replay(pool, n, deps, continuation, metrics=None) -> TaskFuture:
    """Replay ``continuation`` over the deps' resolved values. Dependencies
    are awaited once; retries reuse the retained copies, never the deps."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return _dataflow_resilient(
        pool, deps,
        lambda out, values: _spawn_replay(pool, out, n, None, continuation, values, {}, metrics))


def dataflow_replay_validate(pool, n, validate, deps, continuation, metrics=None) -> TaskFuture:
    if n < 1:
        raise ValueError("n must be >= 1")
    return _dataflow_resilient(
        pool, deps,
        lambda out, values: _spawn_replay(pool, out, n, validate, continuation, values, {}, metrics))


def _dataflow_replicate(pool, n, deps, continuation, validate, vote, metrics):
    if n < 1:
        raise ValueError("n must be >= 1")

    def _launch(out, values):
        _spawn_replicate(pool, out, n, validate, vote, continuation,
                         tuple(values), {}, metrics)

    return _dataflow_resilient(pool, deps, _launch)


def dataflow_replicate(pool, n, deps, continuation, metrics=None) -> TaskFuture:
    return _dataflow_replicate(pool, n, deps, continuation, None, None, metrics)


def dataflow_replicate_validate(pool, n, validate, deps, continuation, metrics=None) -> TaskFuture:
    return _dataflow_replicate(pool, n, deps, continuation, validate, None, metrics)


def dataflow_replicate_vote(pool, n, vote, deps, continuation, metrics=None) -> TaskFuture:
    return _dataflow_replicate(pool, n, deps, continuation, None, vote or majority_vote, metrics)


def dataflow_replicate_vote_validate(pool, n, vote, validate, deps, continuation, metrics=None) -> TaskFuture:
    return _dataflow_replicate(pool, n, deps, continuation, validate, vote or majority_vote, metrics)


# -- resilient executor -------------------------------------------------------

REPLAY = "replay"
REPLICATE = "replicate"


class ResilientExecutor:
    """Wraps a worker pool so every submission goes through a combinator.

    Mode ``replay`` uses (validated) replay; mode ``replicate`` picks the
    replicate variant matching which of ``validate`` / ``vote`` are given.
    """

    def __init__(self, pool: WorkerPool, mode: str, n: int,
                 validate: Callable | None = None, vote: Callable | None = None,
                 metrics: ResilienceMetrics | None = None):
        if mode not in (REPLAY, REPLICATE):
            raise ValueError(f"unknown mode: {mode!r}")
        if n < 1:
            raise ValueError("n must be >= 1")
        self.pool = pool
        self.mode = mode
        self.n = n
        self.validate = validate
        self.vote = vote
        self.metrics = metrics if metrics is not None else ResilienceMetrics()

    def submit(self, task: Callable, *args, **kwargs) -> TaskFuture:
        if self.mode == REPLAY:
            if self.validate is not None:
                return async_replay_validate(self.pool, self.n, self.validate, task,
                                             *args, metrics=self.metrics, **kwargs)
            return async_replay(self.pool, self.n, task, *args, metrics=self.metrics, **kwargs)
        return _replicate(self.pool, self.n, task, args, kwargs,
                          self.validate, self.vote, self.metrics)

    def submit_all(self, task: Callable, args_list: Sequence[tuple]) -> list[TaskFuture]:
        """Bulk entry point: one wrapped submission per argument tuple."""
        return [self.submit(task, *a) for a in args_list]


def make_resilient_executor(pool, mode, n, validate=None, vote=None, metrics=None) -> ResilientExecutor:
    return ResilientExecutor(pool, mode, n, validate=validate, vote=vote, metrics=metrics)
