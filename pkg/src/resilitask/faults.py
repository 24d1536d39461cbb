"""Deterministic, seedable fault model.

Failure decisions are pure functions of ``(seed, task_id, attempt, locality)``
via a counter-based hash, so runs reproduce bitwise regardless of thread
scheduling, and every replay attempt draws fresh randomness because the
attempt number differs. A configurable set of faulty localities fails at a
multiple (default 10x) of the base rate. Failures manifest either as a thrown
:class:`SimulatedCorruption` or as silent data corruption of a float array
(one flipped mantissa bit).
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

THROW = "throw"
CORRUPT = "corrupt"


class SimulatedCorruption(Exception):
    """Injected fault, distinct from any genuine error raised by task code."""


@dataclass(frozen=True)
class FaultSpec:
    base_rate: float = 0.0
    faulty_localities: frozenset = field(default_factory=frozenset)
    faulty_multiplier: float = 10.0
    mode: str = THROW
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.base_rate <= 1.0:
            raise ValueError("base_rate must be within [0, 1]")
        if self.faulty_multiplier <= 0:
            raise ValueError("faulty_multiplier must be positive")
        if self.mode not in (THROW, CORRUPT):
            raise ValueError(f"unknown fault mode: {self.mode!r}")
        object.__setattr__(self, "faulty_localities", frozenset(self.faulty_localities))


@dataclass(frozen=True)
class FaultContext:
    """One sampling event: (task_id, attempt, locality) identifies it uniquely."""

    locality: int = 0
    task_id: int = 0
    attempt: int = 1


def _unit_draw(seed: int, task_id: int, attempt: int, locality: int, lane: int) -> float:
    """Uniform draw in [0, 1), stateless. ``lane`` separates independent uses
    (failure decision, corruption element, corruption bit) of one context."""
    msg = struct.pack("<qqqqq", seed, task_id, attempt, locality, lane)
    digest = hashlib.blake2b(msg, digest_size=8).digest()
    return int.from_bytes(digest, "little") / 2.0 ** 64


def effective_rate(spec: FaultSpec, locality: int) -> float:
    """Per-task failure probability at ``locality``, clamped to [0, 1]."""
    if locality in spec.faulty_localities:
        return min(1.0, spec.base_rate * spec.faulty_multiplier)
    return spec.base_rate


def sample_failure(spec: FaultSpec, ctx: FaultContext) -> bool:
    """Decide whether this task attempt fails. Deterministic in (spec, ctx)."""
    rate = effective_rate(spec, ctx.locality)
    if rate <= 0.0:
        return False
    if rate >= 1.0:
        return True
    return _unit_draw(spec.seed, ctx.task_id, ctx.attempt, ctx.locality, 0) < rate


# Mantissa bits 32..51 of an IEEE double: flipping one changes the value by
# a factor between 2**-20 and 2**-1 of the element, large enough for a
# checksum with a ~1e-9 relative tolerance to notice on same-scale data.
_MIN_FLIP_BIT = 32
_MAX_FLIP_BIT = 51


def flip_mantissa_bit(values: np.ndarray, spec: FaultSpec, ctx: FaultContext) -> np.ndarray:
    """Return a copy of ``values`` with one high mantissa bit flipped.

    Element index and bit position come from the same deterministic stream
    as the failure decision, so identical (spec, ctx) corrupt identically.
    """
    out = np.array(values, dtype=np.float64)
    if out.size == 0:
        return out
    idx = int(_unit_draw(spec.seed, ctx.task_id, ctx.attempt, ctx.locality, 1) * out.size)
    bit = _MIN_FLIP_BIT + int(
        _unit_draw(spec.seed, ctx.task_id, ctx.attempt, ctx.locality, 2)
        * (_MAX_FLIP_BIT - _MIN_FLIP_BIT + 1)
    )
    bits = out.view(np.uint64)
    bits[idx] ^= np.uint64(1) << np.uint64(bit)
    return out


def flip_detectable_bit(values: np.ndarray, spec: FaultSpec, ctx: FaultContext) -> np.ndarray:
    """Like :func:`flip_mantissa_bit` but guaranteed visible to a sum check.

    Flips the leading mantissa bit (magnitude 1/4..1/2 of the element) of a
    deterministically chosen element among those at or above the array's mean
    magnitude, so the perturbation is at least sum|values| / (4 * size): far
    above any relative tolerance down to ~1/size * 1e-? of the data scale.
    An all-zero array gets one element set to 1.0 instead.
    """
    out = np.array(values, dtype=np.float64)
    if out.size == 0:
        return out
    mags = np.abs(out)
    total = float(mags.sum())
    if total == 0.0:
        idx = int(_unit_draw(spec.seed, ctx.task_id, ctx.attempt, ctx.locality, 1) * out.size)
        out[idx] = 1.0
        return out
    eligible = np.flatnonzero(mags >= total / out.size)
    pick = int(_unit_draw(spec.seed, ctx.task_id, ctx.attempt, ctx.locality, 1) * eligible.size)
    idx = int(eligible[pick])
    bits = out.view(np.uint64)
    bits[idx] ^= np.uint64(1) << np.uint64(_MAX_FLIP_BIT)
    return out


def inject(spec: FaultSpec, ctx: FaultContext, value, corruptor: Callable | None = None):
    """Pass ``value`` through the fault model.

    No failure sampled: returns ``value`` unchanged. Failure in throw mode:
    raises :class:`SimulatedCorruption`. Failure in corrupt mode: returns
    ``corruptor(value, spec, ctx)`` (default: one mantissa-bit flip).
    """
    if not sample_failure(spec, ctx):
        return value
    if spec.mode == THROW:
        raise SimulatedCorruption(
            f"injected fault (task={ctx.task_id} attempt={ctx.attempt} locality={ctx.locality})"
        )
    if corruptor is None:
        corruptor = flip_mantissa_bit
    return corruptor(value, spec, ctx)
