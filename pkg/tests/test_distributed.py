"""Scripted per-rank schedules for the distributed combinators.

Handlers key their behavior off the executing locality, so rank order,
fan-out width, and caller-side validation are all observable.
"""

import threading

import pytest

from resilitask.cluster import spawn_localities
from resilitask.combinators import (EXHAUSTED_WITH_EXCEPTION,
                                    EXHAUSTED_WITH_INVALID_RESULT,
                                    NO_VALID_REPLICA, ResilienceError,
                                    async_replay, majority_vote)
from resilitask.distributed import (DistributedMetrics, distributed_replay,
                                    distributed_replay_validate,
                                    distributed_replicate,
                                    distributed_replicate_validate,
                                    distributed_replicate_vote,
                                    make_backup_lists)
from resilitask.engine import current_locality
from resilitask.faults import SimulatedCorruption


@pytest.fixture
def sim():
    with spawn_localities(4) as s:
        yield s


def register_rank_scripted(sim, name, failing=(), value_by_rank=None):
    def handler():
        rank = current_locality()
        if rank in failing:
            raise SimulatedCorruption(f"scripted failure on rank {rank}")
        if value_by_rank is not None:
            return value_by_rank[rank]
        return 42

    sim.register_action(name, handler)


def test_replay_single_locality(sim):
    register_rank_scripted(sim, "univ_ans")
    assert distributed_replay(sim, 0, [0], "univ_ans").result() == 42


def test_replay_walks_past_failing_rank(sim):
    register_rank_scripted(sim, "flaky", failing={1})
    m = DistributedMetrics()
    fut = distributed_replay(sim, 0, [1, 2, 3], "flaky", metrics=m)
    assert fut.result() == 42
    assert fut.succeeded_rank == 2
    assert m.invoked_ranks == [1, 2]
    assert m.remote_invocations == 2


def test_replay_exhaustion_after_all_ranks_fail(sim):
    register_rank_scripted(sim, "dead", failing={1, 2})
    m = DistributedMetrics()
    err = distributed_replay(sim, 0, [1, 2], "dead", metrics=m).exception()
    assert isinstance(err, ResilienceError)
    assert err.kind == EXHAUSTED_WITH_EXCEPTION
    assert m.remote_invocations == 2


def test_replay_invokes_ranks_in_exact_list_order(sim):
    register_rank_scripted(sim, "dead", failing={0, 1, 2, 3})
    ids = [2, 0, 3, 1, 2]
    m = DistributedMetrics()
    distributed_replay(sim, 0, ids, "dead", metrics=m).exception()
    assert m.invoked_ranks == ids


def test_replay_validate_runs_on_the_calling_locality(sim):
    register_rank_scripted(sim, "answer", value_by_rank=[10, 11, 12, 13])
    probe = []

    def validate(result):
        probe.append(current_locality())
        return result == 12

    m = DistributedMetrics()
    fut = distributed_replay_validate(sim, 3, [1, 2], validate, "answer", metrics=m)
    assert fut.result() == 12
    assert set(probe) == {3}  # predicate executed on origin's pool only
    assert m.fallbacks_invalid == 1


def test_replay_validate_exhaustion_kind(sim):
    register_rank_scripted(sim, "answer", value_by_rank=[0, 1, 2, 3])
    err = distributed_replay_validate(sim, 0, [1, 2], lambda r: False, "answer").exception()
    assert err.kind == EXHAUSTED_WITH_INVALID_RESULT


def test_replicate_matches_single_invoke(sim):
    register_rank_scripted(sim, "answer")
    single = sim.remote_invoke(0, 1, "answer").result()
    assert distributed_replicate(sim, 0, [0, 1, 2], "answer").result() == single


def test_replicate_issues_every_invocation_without_cancellation(sim):
    register_rank_scripted(sim, "answer")
    m = DistributedMetrics()
    sim.reset_stats()
    fut = distributed_replicate(sim, 0, [0, 1, 2, 3], "answer", metrics=m)
    assert fut.result() == 42
    # All replies still arrive; nothing is cancelled by the early win.
    deadline = threading.Event()
    for _ in range(200):
        stats = sim.stats()
        if stats["replies_received"] == 4:
            break
        deadline.wait(0.01)
    assert m.remote_invocations == 4
    assert sim.stats()["envelopes_sent"] == 4
    assert sim.stats()["replies_received"] == 4


def test_replicate_validate_rejects_corrupted_rank(sim):
    # Rank 1 returns a corrupted payload; the checksum-style predicate
    # must route the result to one of the clean ranks.
    register_rank_scripted(sim, "answer", value_by_rank=[7, -999, 7, 7])
    m = DistributedMetrics()
    fut = distributed_replicate_validate(sim, 0, [0, 1, 2], lambda r: r == 7,
                                         "answer", metrics=m)
    assert fut.result() == 7
    assert fut.succeeded_rank in (0, 2)


def test_replicate_vote_majority(sim):
    register_rank_scripted(sim, "answer", value_by_rank=[7, 7, 9, 0])
    fut = distributed_replicate_vote(sim, 0, [0, 1, 2], majority_vote, "answer")
    assert fut.result() == 7


def test_replicate_no_valid_replica(sim):
    register_rank_scripted(sim, "dead", failing={0, 1, 2, 3})
    err = distributed_replicate(sim, 0, [0, 1, 2], "dead").exception()
    assert err.kind == NO_VALID_REPLICA


def test_single_entry_list_equivalent_to_local_replay(sim):
    register_rank_scripted(sim, "answer")
    local = async_replay(sim.pool(0), 1, lambda: 42).result()
    remote = distributed_replay(sim, 0, [0], "answer").result()
    assert remote == local


def test_duplicate_ids_are_permitted(sim):
    register_rank_scripted(sim, "dead", failing={1})
    m = DistributedMetrics()
    distributed_replay(sim, 0, [1, 1], "dead", metrics=m).exception()
    assert m.invoked_ranks == [1, 1]


def test_nested_composition_action_wrapping_local_replay(sim):
    # The remote action itself applies local replay on its own pool.
    attempts = {"count": 0}
    lock = threading.Lock()

    def flaky_compute():
        with lock:
            attempts["count"] += 1
            if attempts["count"] == 1:
                raise SimulatedCorruption("first local try")
        return 5

    def wrapped():
        return async_replay(sim.pool(current_locality()), 3, flaky_compute).result()

    sim.register_action("wrapped", wrapped)
    assert distributed_replay(sim, 0, [2, 3], "wrapped").result() == 5
    assert attempts["count"] == 2


# -- backup lists -------------------------------------------------------------------


def test_backup_list_worked_example():
    assert make_backup_lists(0, 4, 3) == [1, 2, 3]


def test_backup_list_degenerate_single_locality():
    assert make_backup_lists(0, 1, 1) == [0]


def test_backup_lists_exhaustive_properties_small_k():
    for count in range(2, 9):
        lists = {src: make_backup_lists(src, count, count - 1) for src in range(count)}
        # Distinct sources get distinct lists, never containing themselves,
        # and a full-length list reaches every other rank.
        assert len({tuple(v) for v in lists.values()}) == count
        for src, ids in lists.items():
            assert src not in ids
            assert set(ids) == set(range(count)) - {src}


def test_backup_list_validates_length():
    with pytest.raises(ValueError):
        make_backup_lists(0, 4, 5)
