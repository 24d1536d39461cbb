import struct
import time

import numpy as np
import pytest

from resilitask.cluster import (ChannelClosed, CodecError, NetConfig, RemoteError,
                                UnknownActionError, decode_envelope, decode_value,
                                encode_envelope, encode_request, encode_value,
                                spawn_localities)
from resilitask.engine import PoolConfig, wait_all
from resilitask.faults import SimulatedCorruption


# -- codec ----------------------------------------------------------------------


SCALARS = [0, 1, -1, 2**63 - 1, -2**63, True, False, 0.0, -0.0, 1.0 / 3.0,
            float("inf"), float("-inf"), float("nan"), b"", b"\x00\xff raw"]


@pytest.mark.parametrize("value", SCALARS, ids=repr)
def test_codec_roundtrip_scalars_bitwise(value):
    decoded = decode_value(encode_value(value))
    assert type(decoded) is type(value)
    if isinstance(value, float):
        assert struct.pack("<d", decoded) == struct.pack("<d", value)
    else:
        assert decoded == value


def test_codec_roundtrip_arrays_bitwise():
    rng = np.random.default_rng(5)
    for size in (0, 1, 17, 1000):
        arr = rng.standard_normal(size)
        back = decode_value(encode_value(arr))
        assert isinstance(back, np.ndarray) and back.dtype == np.float64
        assert back.tobytes() == arr.tobytes()


def test_codec_roundtrip_nested_tuples():
    value = (1, (2.5, (True, b"xy")), np.array([3.0, -4.0]), ())
    back = decode_value(encode_value(value))
    assert back[0] == 1
    assert back[1] == (2.5, (True, b"xy"))
    assert np.array_equal(back[2], value[2])
    assert back[3] == ()


def test_codec_rejects_unsupported_types():
    with pytest.raises(CodecError):
        encode_value("strings are not part of the wire format")
    with pytest.raises(CodecError):
        encode_value(np.ones((2, 2)))


def test_envelope_golden_bytes():
    # Layout assembled by hand, independently of the encoder.
    name = b"univ_ans"
    payload = bytes([5]) + struct.pack("<H", 1) + bytes([0]) + struct.pack("<q", 17)
    expected = (struct.pack("<I", 0x48505852) + struct.pack("<H", 1)
                + struct.pack("<Q", 7) + struct.pack("<I", 1)
                + struct.pack("<H", len(name)) + name
                + struct.pack("<I", len(payload)) + payload)
    assert expected.hex() == (
        "52585048" "0100" "0700000000000000" "01000000"
        "0800" "756e69765f616e73" "0c000000"
        "05" "0100" "00" "1100000000000000")
    assert encode_request(7, 1, "univ_ans", (17,)) == expected

    env = decode_envelope(expected)
    assert (env.request_id, env.origin, env.name) == (7, 1, "univ_ans")
    assert decode_value(env.payload) == (17,)


def test_envelope_rejects_bad_magic_and_version():
    good = encode_envelope(1, 0, "x", b"")
    with pytest.raises(CodecError):
        decode_envelope(b"\x00" * len(good))
    bad_version = bytearray(good)
    bad_version[4] = 9
    with pytest.raises(CodecError):
        decode_envelope(bytes(bad_version))


# -- remote invocation ------------------------------------------------------------


def test_single_locality_self_invoke():
    with spawn_localities(1) as sim:
        sim.register_action("univ_ans", lambda: 42)
        assert sim.remote_invoke(0, 0, "univ_ans").result() == 42


def test_remote_invoke_moves_bytes_and_matches_local_oracle():
    with spawn_localities(2) as sim:
        sim.register_action("identity", lambda x: x)
        sim.register_action("double_all", lambda arr: arr * 2.0)
        assert sim.remote_invoke(0, 1, "identity", 17).result() == 17
        arr = np.arange(1000, dtype=np.float64)
        remote = sim.remote_invoke(0, 1, "double_all", arr).result()
        assert np.array_equal(remote, arr * 2.0)
        assert sim.stats()["bytes_moved"] > 8000


def test_unknown_action_fails_at_caller():
    with spawn_localities(2) as sim:
        err = sim.remote_invoke(0, 1, "nope").exception()
        assert isinstance(err, UnknownActionError)


def test_duplicate_registration_is_a_configuration_error():
    with spawn_localities(1) as sim:
        sim.register_action("a", lambda: 1)
        with pytest.raises(ValueError):
            sim.register_action("a", lambda: 2)


def test_registration_after_start_is_rejected():
    with spawn_localities(1) as sim:
        sim.register_action("a", lambda: 1)
        sim.remote_invoke(0, 0, "a").result()
        with pytest.raises(RuntimeError):
            sim.register_action("late", lambda: 3)


def test_handler_error_comes_back_as_error_envelope():
    def sdc():
        raise SimulatedCorruption("flipped bits")

    with spawn_localities(2) as sim:
        sim.register_action("sdc", sdc)
        err = sim.remote_invoke(0, 1, "sdc").exception()
        assert isinstance(err, RemoteError)
        assert err.code == "SimulatedCorruption"
        assert "flipped bits" in err.message


def test_handler_mutation_never_reaches_the_caller():
    def scribble(arr):
        arr[:] = -1.0
        return True

    with spawn_localities(2) as sim:
        sim.register_action("scribble", scribble)
        mine = np.ones(32)
        assert sim.remote_invoke(0, 1, "scribble", mine).result() is True
        assert np.array_equal(mine, np.ones(32))


def test_pairwise_roundtrips_and_message_conservation():
    with spawn_localities(4) as sim:
        sim.register_action("add", lambda a, b: a + b)
        futures = []
        for src in range(4):
            for dst in range(4):
                futures.append(sim.remote_invoke(src, dst, "add", src, dst))
        values = wait_all(futures)
        assert values == [s + d for s in range(4) for d in range(4)]
        stats = sim.stats()
        assert stats["envelopes_sent"] == stats["envelopes_delivered"] == 16
        assert stats["replies_received"] == 16


def test_thirty_two_localities_spin_up():
    with spawn_localities(32, PoolConfig(1)) as sim:
        sim.register_action("rank_of", lambda r: r)
        got = wait_all([sim.remote_invoke(0, r, "rank_of", r) for r in range(32)])
        assert got == list(range(32))


def test_latency_bounds_round_trip_time():
    with spawn_localities(2, net=NetConfig(latency_us=5000)) as sim:
        sim.register_action("ping", lambda: 1)
        start = time.perf_counter()
        sim.remote_invoke(0, 1, "ping").result()
        assert time.perf_counter() - start >= 0.010


# -- channels ----------------------------------------------------------------------


def test_channel_fifo_order():
    with spawn_localities(2) as sim:
        ch = sim.create_channel(0, 1)
        for v in (1, 2, 3):
            ch.send(v)
        assert [ch.recv().result() for _ in range(3)] == [1, 2, 3]


def test_channel_recv_before_send():
    with spawn_localities(2) as sim:
        ch = sim.create_channel(0, 1)
        fut = ch.recv()
        assert not fut.done()
        ch.send(2.5)
        assert fut.result() == 2.5


def test_channel_closed_empty_recv_errors():
    with spawn_localities(2) as sim:
        ch = sim.create_channel(0, 1)
        ch.send(1)
        ch.close()
        assert ch.recv().result() == 1  # drain is allowed
        assert isinstance(ch.recv().exception(), ChannelClosed)


def test_ring_ghost_exchange_matches_sequential_rotation():
    # Each rank forwards its payload rightward for ten steps; the end state
    # must equal rotating the initial assignment ten positions.
    ranks = 4
    steps = 10
    with spawn_localities(ranks) as sim:
        right = [sim.create_channel(r, (r + 1) % ranks) for r in range(ranks)]
        held = [float(r) for r in range(ranks)]
        for _ in range(steps):
            for r in range(ranks):
                right[r].send(held[r])
            held = [right[(r - 1) % ranks].recv().result() for r in range(ranks)]
    expected = [float((r - steps) % ranks) for r in range(ranks)]
    assert held == expected
