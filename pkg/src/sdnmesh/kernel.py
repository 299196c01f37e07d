"""Deterministic discrete-event kernel.

Time is an integer count of microseconds. Events with equal timestamps fire
in the order they were scheduled.
"""
from __future__ import annotations

import hashlib
import heapq
import random
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

US = 1
MS = 1_000
SEC = 1_000_000

# stream ids reserved for shared entities; node streams use the node id
MEDIUM_STREAM = 1_000_000
TRAFFIC_STREAM = 1_000_001
FAULT_STREAM = 1_000_002
CONTROLLER_STREAM = 1_000_003
PROBE_STREAM = 1_000_004


def seconds(value: float) -> int:
    """Convert seconds to integer microsecond ticks."""
    return int(round(value * SEC))


def millis(value: float) -> int:
    return int(round(value * MS))


def to_ms(ticks: int) -> float:
    return ticks / MS


class SchedulingError(ValueError):
    """Raised when an event is scheduled before the current clock."""


@dataclass(eq=False)
class Event:
    fire_at: int
    seq: int
    target: Any
    payload: Callable[..., Any]
    args: tuple = ()
    cancelled: bool = False
    fired: bool = False

    def __lt__(self, other: "Event") -> bool:
        return (self.fire_at, self.seq) < (other.fire_at, other.seq)


class RngStream(random.Random):
    """Per-entity random stream derived from ``(seed, stream_id)``.

    The 64-bit state seed comes from a numpy SeedSequence spawn key, so
    streams are independent of one another and identical across platforms.
    """

    def __new__(cls, seed: int = 0, stream_id: int = 0):
        return super().__new__(cls)

    def __init__(self, seed: int = 0, stream_id: int = 0):
        self.seed_value = int(seed)
        self.stream_id = int(stream_id)
        ss = np.random.SeedSequence(self.seed_value & ((1 << 64) - 1), spawn_key=(self.stream_id,))
        super().__init__(int(ss.generate_state(2, dtype=np.uint64)[0]))


@dataclass
class Simulator:
    seed: int = 0
    trace: bool = False
    now: int = 0
    _queue: list = field(default_factory=list)
    _seq: int = 0
    _streams: dict = field(default_factory=dict)
    processed: int = 0

    def __post_init__(self):
        self._digest = hashlib.blake2b(digest_size=16) if self.trace else None

    def schedule(self, fire_at: int, payload: Callable[..., Any], *args, target: Any = None) -> Event:
        fire_at = int(fire_at)
        if fire_at < self.now:
            raise SchedulingError(f"cannot schedule at t={fire_at} before now={self.now}")
        ev = Event(fire_at, self._seq, target, payload, args)
        self._seq += 1
        heapq.heappush(self._queue, (fire_at, ev.seq, ev))
        return ev

    def schedule_in(self, delay: int, payload: Callable[..., Any], *args, target: Any = None) -> Event:
        return self.schedule(self.now + int(delay), payload, *args, target=target)

    def cancel(self, handle: Event) -> bool:
        if handle.cancelled or handle.fired:
            return False
        handle.cancelled = True
        return True

    def pending(self) -> int:
        return sum(1 for _, _, ev in self._queue if not ev.cancelled)

    def run_until(self, horizon: int) -> int:
        """Process every event with ``fire_at <= horizon``; returns the count.

        The clock ends at ``horizon`` even when the queue drains early.
        """
        horizon = int(horizon)
        queue = self._queue
        count = 0
        digest = self._digest
        while queue and queue[0][0] <= horizon:
            fire_at, seq, ev = heapq.heappop(queue)
            if ev.cancelled:
                continue
            self.now = fire_at
            ev.fired = True
            if digest is not None:
                name = getattr(ev.payload, "__qualname__", repr(ev.payload))
                digest.update(f"{fire_at}:{seq}:{name}:{ev.target}\n".encode())
            ev.payload(*ev.args)
            count += 1
        if horizon > self.now:
            self.now = horizon
        self.processed += count
        return count

    def rng(self, stream_id: int) -> RngStream:
        stream = self._streams.get(stream_id)
        if stream is None:
            stream = self._streams[stream_id] = RngStream(self.seed, stream_id)
        return stream

    def trace_digest(self) -> str:
        if self._digest is None:
            raise RuntimeError("simulator was created without trace=True")
        return self._digest.hexdigest()
