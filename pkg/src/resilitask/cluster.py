"""In-process simulation of multiple runtime localities.

Each locality owns an isolated worker pool. Cross-locality calls go through
a named action registry and a byte-level codec: arguments are serialized at
the origin, shipped as an envelope (optionally delayed to model network
cost), decoded and executed on the target's pool, and the result is
serialized back. Typed FIFO channels connect locality pairs for streaming
data such as ghost regions. There is no shared mutable state between
localities other than this message transport, so handlers can never alias
caller memory.

Wire format (little-endian throughout)::

    envelope = [u32 magic 0x48505852] [u16 version=1] [u64 request_id]
               [u32 origin_rank] [u16 name_len] [name bytes]
               [u32 payload_len] [payload]

A reply reuses the layout with ``name_len == 0``. The payload is one encoded
value, normally a tuple. Value encoding is a one-byte type tag followed by
the body: 0=i64, 1=f64, 2=f64 array (u64 count, raw values), 3=byte array
(u64 length, bytes), 4=bool, 5=tuple (u16 arity, encoded elements).
"""

from __future__ import annotations

import heapq
import itertools
import struct
import threading
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .engine import PoolConfig, TaskFuture, WorkerPool

MAGIC = 0x48505852
VERSION = 1

TAG_I64 = 0
TAG_F64 = 1
TAG_F64_ARRAY = 2
TAG_BYTES = 3
TAG_BOOL = 4
TAG_TUPLE = 5


class CodecError(Exception):
    pass


class RemoteError(Exception):
    """A remote handler failed; only its type name and message cross the wire."""

    def __init__(self, code: str, message: str):
        self.code = code
        self.message = message
        super().__init__(f"[{code}] {message}")


class UnknownActionError(Exception):
    pass


class ChannelClosed(Exception):
    pass


# -- value codec --------------------------------------------------------------


def encode_value(value) -> bytes:
    out = bytearray()
    _encode_into(out, value)
    return bytes(out)


def _encode_into(out: bytearray, value) -> None:
    # bool first: it is a subtype of int.
    if isinstance(value, (bool, np.bool_)):
        out.append(TAG_BOOL)
        out.append(1 if value else 0)
    elif isinstance(value, (int, np.integer)):
        out.append(TAG_I64)
        out += struct.pack("<q", int(value))
    elif isinstance(value, (float, np.floating)):
        out.append(TAG_F64)
        out += struct.pack("<d", float(value))
    elif isinstance(value, np.ndarray):
        if value.dtype != np.float64 or value.ndim != 1:
            raise CodecError("only 1-D float64 arrays are serializable")
        out.append(TAG_F64_ARRAY)
        out += struct.pack("<Q", value.size)
        out += value.astype("<f8", copy=False).tobytes()
    elif isinstance(value, (bytes, bytearray)):
        out.append(TAG_BYTES)
        out += struct.pack("<Q", len(value))
        out += bytes(value)
    elif isinstance(value, (tuple, list)):
        if len(value) > 0xFFFF:
            raise CodecError("tuple too long to serialize")
        out.append(TAG_TUPLE)
        out += struct.pack("<H", len(value))
        for item in value:
            _encode_into(out, item)
    else:
        raise CodecError(f"type {type(value).__name__} is not serializable")


def decode_value(data: bytes, offset: int = 0):
    value, end = _decode_from(data, offset)
    if end != len(data):
        raise CodecError("trailing bytes after payload value")
    return value


def _decode_from(data: bytes, pos: int):
    tag = data[pos]
    pos += 1
    if tag == TAG_I64:
        return struct.unpack_from("<q", data, pos)[0], pos + 8
    if tag == TAG_F64:
        return struct.unpack_from("<d", data, pos)[0], pos + 8
    if tag == TAG_F64_ARRAY:
        (count,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=pos).copy()
        return arr, pos + 8 * count
    if tag == TAG_BYTES:
        (length,) = struct.unpack_from("<Q", data, pos)
        pos += 8
        return bytes(data[pos:pos + length]), pos + length
    if tag == TAG_BOOL:
        return data[pos] != 0, pos + 1
    if tag == TAG_TUPLE:
        (arity,) = struct.unpack_from("<H", data, pos)
        pos += 2
        items = []
        for _ in range(arity):
            item, pos = _decode_from(data, pos)
            items.append(item)
        return tuple(items), pos
    raise CodecError(f"unknown type tag {tag}")


# -- envelopes ----------------------------------------------------------------

_HEADER = struct.Struct("<IHQIH")


@dataclass(frozen=True)
class Envelope:
    request_id: int
    origin: int
    name: str  # empty string marks a reply
    payload: bytes

    @property
    def is_reply(self) -> bool:
        return self.name == ""


def encode_envelope(request_id: int, origin: int, name: str, payload: bytes) -> bytes:
    name_bytes = name.encode("ascii")
    head = _HEADER.pack(MAGIC, VERSION, request_id, origin, len(name_bytes))
    return head + name_bytes + struct.pack("<I", len(payload)) + payload


def decode_envelope(data: bytes) -> Envelope:
    magic, version, request_id, origin, name_len = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise CodecError(f"bad magic 0x{magic:08x}")
    if version != VERSION:
        raise CodecError(f"unsupported envelope version {version}")
    pos = _HEADER.size
    name = data[pos:pos + name_len].decode("ascii")
    pos += name_len
    (payload_len,) = struct.unpack_from("<I", data, pos)
    pos += 4
    payload = data[pos:pos + payload_len]
    if len(payload) != payload_len or pos + payload_len != len(data):
        raise CodecError("envelope length mismatch")
    return Envelope(request_id, origin, name, payload)


def encode_request(request_id: int, origin: int, name: str, args: tuple) -> bytes:
    return encode_envelope(request_id, origin, name, encode_value(tuple(args)))


def encode_reply(request_id: int, origin: int, outcome) -> bytes:
    """``outcome`` is (True, value) or (False, code, message)."""
    if outcome[0]:
        payload = encode_value((True, outcome[1]))
    else:
        payload = encode_value((False, outcome[1].encode(), outcome[2].encode()))
    return encode_envelope(request_id, origin, "", payload)


# -- network model ------------------------------------------------------------


@dataclass(frozen=True)
class NetConfig:
    """Synthetic transfer cost; all-zero means instantaneous delivery."""

    latency_us: float = 0.0
    per_byte_us: float = 0.0

    def __post_init__(self):
        if self.latency_us < 0 or self.per_byte_us < 0:
            raise ValueError("network costs must be non-negative")

    def delay_s(self, nbytes: int) -> float:
        return (self.latency_us + self.per_byte_us * nbytes) / 1e6

    @property
    def instantaneous(self) -> bool:
        return self.latency_us == 0 and self.per_byte_us == 0


class _DelayLine(threading.Thread):
    """Delivers scheduled callbacks in (due time, enqueue order) order."""

    def __init__(self):
        super().__init__(name="sim-delayline", daemon=True)
        self._cond = threading.Condition()
        self._heap = []
        self._seq = itertools.count()
        self._halt = False
        self.start()

    def schedule(self, delay_s: float, fn: Callable[[], None]) -> None:
        due = time.monotonic() + delay_s
        with self._cond:
            heapq.heappush(self._heap, (due, next(self._seq), fn))
            self._cond.notify()

    def run(self):
        while True:
            with self._cond:
                while not self._halt and (not self._heap or self._heap[0][0] > time.monotonic()):
                    if self._heap:
                        self._cond.wait(max(0.0, self._heap[0][0] - time.monotonic()))
                    else:
                        self._cond.wait()
                if self._halt:
                    return
                _, _, fn = heapq.heappop(self._heap)
            fn()

    def stop(self):
        with self._cond:
            self._halt = True
            self._cond.notify()
        self.join()


# -- channels -----------------------------------------------------------------


class Channel:
    """FIFO exactly-once pipe between two localities.

    Values are serialized at ``send`` and decoded on receipt, so the two
    endpoints never share memory. ``recv`` returns a future that resolves
    once a message is available.
    """

    def __init__(self, sim: "LocalitySim", src: int, dst: int):
        self._sim = sim
        self.src = src
        self.dst = dst
        self._lock = threading.Lock()
        self._buffer = []  # encoded payloads, delivery order
        self._waiters = []
        self._closed = False

    def send(self, value) -> None:
        payload = encode_value(value)
        self._sim._count_bytes(len(payload))
        self._sim._transmit(len(payload), lambda: self._deliver(payload))

    def _deliver(self, payload: bytes) -> None:
        with self._lock:
            if self._waiters:
                waiter = self._waiters.pop(0)
            else:
                self._buffer.append(payload)
                return
        waiter._resolve(decode_value(payload))

    def recv(self) -> TaskFuture:
        fut = TaskFuture()
        with self._lock:
            if self._buffer:
                payload = self._buffer.pop(0)
            elif self._closed:
                payload = None
            else:
                self._waiters.append(fut)
                return fut
        if payload is None:
            fut._reject(ChannelClosed(f"channel {self.src}->{self.dst} is closed"))
        else:
            fut._resolve(decode_value(payload))
        return fut

    def close(self) -> None:
        with self._lock:
            self._closed = True
            waiters, self._waiters = self._waiters, []
        for w in waiters:
            w._reject(ChannelClosed(f"channel {self.src}->{self.dst} is closed"))


# -- the simulation -----------------------------------------------------------


class _Locality:
    def __init__(self, sim: "LocalitySim", rank: int, pool_config: PoolConfig):
        self.rank = rank
        self.pool = WorkerPool(pool_config, locality=rank)


class LocalitySim:
    """K localities with isolated pools, an action registry, and channels."""

    def __init__(self, count: int, pool_config: PoolConfig = PoolConfig(2),
                 net: NetConfig = NetConfig()):
        if count < 1:
            raise ValueError("need at least one locality")
        self.net = net
        self._actions: dict[str, Callable] = {}
        self._started = False
        self._pending: dict[int, TaskFuture] = {}
        self._pending_lock = threading.Lock()
        self._request_ids = itertools.count(1)
        self._stats_lock = threading.Lock()
        self._stats = {"envelopes_sent": 0, "envelopes_delivered": 0,
                       "replies_received": 0, "bytes_moved": 0}
        self._delay_line = None if net.instantaneous else _DelayLine()
        self._localities = [_Locality(self, r, pool_config) for r in range(count)]
        self._channels: list[Channel] = []
        self._closed = False

    @property
    def locality_count(self) -> int:
        return len(self._localities)

    def pool(self, rank: int) -> WorkerPool:
        return self._localities[rank].pool

    # -- configuration -----------------------------------------------------

    def register_action(self, name: str, handler: Callable) -> None:
        """Bind ``handler`` under ``name`` on every locality.

        Must happen before the first remote invocation; duplicate names are
        a configuration error.
        """
        if self._started:
            raise RuntimeError("actions must be registered before invocations start")
        if name in self._actions:
            raise ValueError(f"action {name!r} already registered")
        if not name:
            raise ValueError("action name must be non-empty")
        self._actions[name] = handler

    # -- invocation --------------------------------------------------------

    def remote_invoke(self, origin: int, target: int, action: str, *args) -> TaskFuture:
        """Run a registered action on ``target``; resolve at ``origin``.

        Arguments are encoded here (so the callee can never see caller
        memory), the handler runs as a task on the target's pool, and the
        result or error is decoded from the reply envelope.
        """
        self._started = True
        self._check_rank(origin)
        self._check_rank(target)
        fut = TaskFuture()
        if action not in self._actions:
            fut._reject(UnknownActionError(f"action {action!r} is not registered"))
            return fut
        request_id = next(self._request_ids)
        data = encode_request(request_id, origin, action, args)
        with self._pending_lock:
            self._pending[request_id] = fut
        with self._stats_lock:
            self._stats["envelopes_sent"] += 1
            self._stats["bytes_moved"] += len(data)
        pool = self._localities[target].pool
        self._transmit(len(data), lambda: pool._spawn(
            lambda: self._serve(data, target)))
        return fut

    def _transmit(self, nbytes: int, deliver: Callable[[], None]) -> None:
        if self._delay_line is None:
            deliver()
        else:
            self._delay_line.schedule(self.net.delay_s(nbytes), deliver)

    def _count_bytes(self, nbytes: int) -> None:
        with self._stats_lock:
            self._stats["bytes_moved"] += nbytes

    def _serve(self, data: bytes, rank: int) -> None:
        # Runs on a worker of the target locality's pool.
        env = decode_envelope(data)
        with self._stats_lock:
            self._stats["envelopes_delivered"] += 1
        handler = self._actions[env.name]
        try:
            args = decode_value(env.payload)
            value = handler(*args)
            reply = encode_reply(env.request_id, rank, (True, value))
        except BaseException as exc:
            reply = encode_reply(env.request_id, rank,
                                 (False, type(exc).__name__, str(exc)))
        with self._stats_lock:
            self._stats["bytes_moved"] += len(reply)
        self._transmit(len(reply), lambda: self._complete(reply))

    def _complete(self, data: bytes) -> None:
        env = decode_envelope(data)
        with self._pending_lock:
            fut = self._pending.pop(env.request_id, None)
        if fut is None:
            return
        with self._stats_lock:
            self._stats["replies_received"] += 1
        outcome = decode_value(env.payload)
        if outcome[0]:
            fut._resolve(outcome[1])
        else:
            fut._reject(RemoteError(outcome[1].decode(), outcome[2].decode()))

    # -- channels ----------------------------------------------------------

    def create_channel(self, src: int, dst: int) -> Channel:
        self._check_rank(src)
        self._check_rank(dst)
        ch = Channel(self, src, dst)
        self._channels.append(ch)
        return ch

    # -- bookkeeping ---------------------------------------------------------

    def stats(self) -> dict:
        with self._stats_lock:
            return dict(self._stats)

    def reset_stats(self) -> None:
        with self._stats_lock:
            for key in self._stats:
                self._stats[key] = 0

    def _check_rank(self, rank: int) -> None:
        if not 0 <= rank < len(self._localities):
            raise ValueError(f"locality {rank} out of range")

    def shutdown(self) -> None:
        if self._closed:
            return
        self._closed = True
        if self._delay_line is not None:
            self._delay_line.stop()
        for ch in self._channels:
            ch.close()
        for loc in self._localities:
            loc.pool.shutdown()

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.shutdown()
        return False


def spawn_localities(count: int, pool_config: PoolConfig = PoolConfig(2),
                     net: NetConfig = NetConfig()) -> LocalitySim:
    """Stand up ``count`` isolated localities connected by the simulated wire."""
    return LocalitySim(count, pool_config, net)
