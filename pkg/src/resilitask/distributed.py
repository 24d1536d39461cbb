"""Distributed replay and replicate over simulated localities.

The calling locality drives the whole protocol: it issues the remote
invocations, runs the validate predicate and any vote function on its own
pool, and decides when to move on. Replay walks the user-given locality
list in order; replicate fans out to every listed locality at once and
never cancels stragglers.

The drivers are callback-chained, so no pool worker blocks while a remote
result is in flight.
"""

from __future__ import annotations

import copy
import threading
from typing import Callable, Sequence

from .cluster import LocalitySim
from .combinators import (EXHAUSTED_WITH_EXCEPTION, EXHAUSTED_WITH_INVALID_RESULT,
                          NO_VALID_REPLICA, ResilienceError, majority_vote)
from .engine import TaskFuture


class DistributedMetrics:
    """Per-invocation protocol trace, mainly for tests and run reports."""

    def __init__(self):
        self._lock = threading.Lock()
        self.invoked_ranks: list[int] = []
        self.remote_invocations = 0
        self.fallbacks_exception = 0
        self.fallbacks_invalid = 0
        self.succeeded_ranks: list[int] = []

    @property
    def fallbacks(self) -> int:
        return self.fallbacks_exception + self.fallbacks_invalid

    def _invoked(self, rank):
        with self._lock:
            self.invoked_ranks.append(rank)
            self.remote_invocations += 1


def _check_ids(ids):
    if not ids:
        raise ValueError("locality list must be non-empty")
    return list(ids)


def distributed_replay(sim: LocalitySim, origin: int, ids: Sequence[int], action: str,
                       *args, validate: Callable | None = None,
                       metrics: DistributedMetrics | None = None) -> TaskFuture:
    """Try ``action`` on each locality in ``ids`` until a result passes.

    A failed invocation (remote exception or transport error) and a
    validation failure both advance to the next locality; on exhaustion the
    error mirrors the last failure. ``validate`` runs on the origin's pool.
    """
    ids = _check_ids(ids)
    out = TaskFuture()
    retained = copy.deepcopy(args) if args else args
    metrics = metrics if metrics is not None else DistributedMetrics()
    state = {"index": 0, "last_error": None, "last_invalid": False}

    def _try_next():
        rank = ids[state["index"]]
        metrics._invoked(rank)
        fut = sim.remote_invoke(origin, rank, action, *retained)
        fut.add_done_callback(lambda f, r=rank: _remote_done(f, r))

    def _remote_done(fut, rank):
        err = fut._error
        if err is not None:
            state["last_error"], state["last_invalid"] = err, False
            with metrics._lock:
                metrics.fallbacks_exception += 1
            _advance()
            return
        value = fut._value
        if validate is None:
            _accept(value, rank)
            return
        sim.pool(origin).submit(validate, value).add_done_callback(
            lambda vf, v=value, r=rank: _validated(vf, v, r))

    def _validated(vfut, value, rank):
        err = vfut._error
        if err is None and vfut._value:
            _accept(value, rank)
            return
        if err is not None:
            state["last_error"], state["last_invalid"] = err, False
            with metrics._lock:
                metrics.fallbacks_exception += 1
        else:
            state["last_error"], state["last_invalid"] = None, True
            with metrics._lock:
                metrics.fallbacks_invalid += 1
        _advance()

    def _accept(value, rank):
        with metrics._lock:
            metrics.succeeded_ranks.append(rank)
        out.attempts = state["index"] + 1
        out.succeeded_rank = rank
        out._resolve(value)

    def _advance():
        state["index"] += 1
        if state["index"] < len(ids):
            _try_next()
            return
        kind = EXHAUSTED_WITH_INVALID_RESULT if state["last_invalid"] else EXHAUSTED_WITH_EXCEPTION
        out.attempts = len(ids)
        out._reject(ResilienceError(kind, len(ids), state["last_error"]))

    _try_next()
    return out


def distributed_replay_validate(sim, origin, ids, validate, action, *args,
                                metrics=None) -> TaskFuture:
    return distributed_replay(sim, origin, ids, action, *args,
                              validate=validate, metrics=metrics)


def _distributed_replicate(sim, origin, ids, action, args, validate, vote, metrics):
    ids = _check_ids(ids)
    out = TaskFuture()
    retained = copy.deepcopy(args) if args else args
    metrics = metrics if metrics is not None else DistributedMetrics()
    n = len(ids)
    lock = threading.Lock()
    state = {"pending": n, "resolved": False, "last_error": None}
    outcomes = [None] * n  # (ok, value); ok None = invalid
    voting = vote is not None

    def _record(index, ok, value):
        finish = None
        with lock:
            outcomes[index] = (ok, value)
            state["pending"] -= 1
            if ok is False:
                state["last_error"] = value
            done = state["pending"] == 0
            if not voting and ok is True and not state["resolved"]:
                state["resolved"] = True
                finish = ("win", value, index, n - state["pending"])
            elif done and not state["resolved"]:
                state["resolved"] = True
                finish = ("vote",) if voting else ("fail",)
        if finish is None:
            return
        if finish[0] == "win":
            with metrics._lock:
                metrics.succeeded_ranks.append(ids[finish[2]])
            out.attempts = finish[3]
            out.winner_index = finish[2]
            out.succeeded_rank = ids[finish[2]]
            out._resolve(finish[1])
        elif finish[0] == "fail":
            out.attempts = n
            out._reject(ResilienceError(NO_VALID_REPLICA, n, state["last_error"]))
        else:
            sim.pool(origin)._spawn(_finish_vote)

    def _finish_vote():
        candidates = [v for ok, v in outcomes if ok is True]
        out.attempts = n
        if not candidates:
            out._reject(ResilienceError(NO_VALID_REPLICA, n, state["last_error"]))
            return
        try:
            out._resolve(vote(candidates))
        except BaseException as exc:
            out._reject(exc)

    def _remote_done(fut, index):
        err = fut._error
        if err is not None:
            with metrics._lock:
                metrics.fallbacks_exception += 1
            _record(index, False, err)
            return
        value = fut._value
        if validate is None:
            _record(index, True, value)
            return
        sim.pool(origin).submit(validate, value).add_done_callback(
            lambda vf, v=value, i=index: _validated(vf, v, i))

    def _validated(vfut, value, index):
        err = vfut._error
        if err is None and vfut._value:
            _record(index, True, value)
        elif err is not None:
            with metrics._lock:
                metrics.fallbacks_exception += 1
            _record(index, False, err)
        else:
            with metrics._lock:
                metrics.fallbacks_invalid += 1
            _record(index, None, value)

    for i, rank in enumerate(ids):
        metrics._invoked(rank)
        fut = sim.remote_invoke(origin, rank, action, *retained)
        fut.add_done_callback(lambda f, i=i: _remote_done(f, i))
    return out


def distributed_replicate(sim, origin, ids, action, *args, metrics=None) -> TaskFuture:
    """Invoke ``action`` on every listed locality; first clean result wins.

    In the voting variants, every validated result is collected (in list
    order) and the consensus runs on the origin's pool once all replies are
    in. Replicas are never cancelled.
    """
    return _distributed_replicate(sim, origin, ids, action, args, None, None, metrics)


def distributed_replicate_validate(sim, origin, ids, validate, action, *args, metrics=None) -> TaskFuture:
    return _distributed_replicate(sim, origin, ids, action, args, validate, None, metrics)


def distributed_replicate_vote(sim, origin, ids, vote, action, *args, metrics=None) -> TaskFuture:
    return _distributed_replicate(sim, origin, ids, action, args, None, vote or majority_vote, metrics)


def distributed_replicate_vote_validate(sim, origin, ids, vote, validate, action, *args,
                                        metrics=None) -> TaskFuture:
    return _distributed_replicate(sim, origin, ids, action, args, validate,
                                  vote or majority_vote, metrics)


def make_backup_lists(source: int, count: int, length: int) -> list[int]:
    """Deterministic permuted round-robin backup localities for ``source``.

    Entry ``i`` is ``(source + 1 + ((source + i) mod (count - 1))) mod count``,
    which never includes ``source`` itself for ``length <= count - 1`` and
    gives different sources different lists. A single-locality simulation
    falls back to ``[source]``.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if length > count:
        raise ValueError("backup list cannot be longer than the locality count")
    if count == 1:
        return [source]
    return [(source + 1 + ((source + i) % (count - 1))) % count for i in range(length)]
