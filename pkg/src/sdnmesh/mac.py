"""CSMA/CA link layer over a ContikiMAC-style duty-cycled radio.

Each node owns a :class:`Mac`. A unicast attempt is a single burst on the
medium: with RDC on, the sender strobes copies of the frame until the
receiver's next channel check, and keeps strobing for the rest of the wake
interval when that copy is lost. Link-layer acks are treated as zero-airtime.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Any, Callable

from .kernel import SEC, US
from .medium import BROADCAST, Medium, Outcome

ACCEPTED = "accepted"
QUEUE_FULL = "queue_full"


@dataclass
class MacConfig:
    max_retries: int = 3
    backoff_unit: int = 320 * US
    min_backoff_exponent: int = 3
    max_backoff_exponent: int = 5
    max_csma_backoffs: int = 4
    queue_capacity: int = 8
    ack_bytes: int = 11
    # consecutive failed frames before the routing layer gives up on a neighbour
    link_fail_limit: int = 2

    def validate(self) -> list[str]:
        errors = []
        if self.max_retries < 0:
            errors.append("mac.max_retries must be >= 0")
        if self.queue_capacity < 1:
            errors.append("mac.queue_capacity must be >= 1")
        if self.link_fail_limit < 1:
            errors.append("mac.link_fail_limit must be >= 1")
        if self.backoff_unit <= 0:
            errors.append("mac.backoff_unit must be > 0")
        if self.max_backoff_exponent < self.min_backoff_exponent:
            errors.append("mac.max_backoff_exponent must be >= min_backoff_exponent")
        return errors


@dataclass
class RdcConfig:
    enabled: bool = True
    channel_check_rate: float = 8.0
    listen_window: int = 2_000 * US
    strobe_enabled: bool = True
    phase_lock: bool = True

    @property
    def wake_interval(self) -> int:
        return int(round(SEC / self.channel_check_rate))

    def validate(self) -> list[str]:
        errors = []
        if not self.channel_check_rate > 0:
            errors.append("rdc.channel_check_rate must be > 0")
        if self.listen_window < 0:
            errors.append("rdc.listen_window must be >= 0")
        return errors


@dataclass
class EnergyLedger:
    """Radio-state time accumulators (microseconds) and CC2420-class currents."""

    tx_time: int = 0
    rx_time: int = 0
    listen_time: int = 0
    tx_current: float = 17.4
    rx_current: float = 18.8
    listen_current: float = 18.8
    voltage: float = 3.0

    def radio_time(self) -> int:
        return self.tx_time + self.rx_time + self.listen_time


def energy_mJ(ledger: EnergyLedger) -> float:
    """Energy in millijoules: volts times the sum of mA * seconds per state."""
    charge = (ledger.tx_current * ledger.tx_time
              + ledger.rx_current * ledger.rx_time
              + ledger.listen_current * ledger.listen_time) / SEC
    return ledger.voltage * charge


def delivery_probability(p: float, retries: int) -> float:
    """Chance that at least one of ``retries + 1`` independent attempts succeeds."""
    return 1.0 - (1.0 - p) ** (retries + 1)


def rdc_listen_time(elapsed: int, rdc: RdcConfig) -> int:
    """Idle-listening time accrued by periodic channel checks over ``elapsed``."""
    wakeups = math.floor(elapsed * rdc.channel_check_rate / SEC + 1e-9)
    return wakeups * rdc.listen_window


def account_listen(ledger: EnergyLedger, elapsed: int, rdc: RdcConfig) -> None:
    """Settle ``listen_time`` at the end of a run (never decreasing it)."""
    busy = ledger.tx_time + ledger.rx_time
    if rdc.enabled:
        listen = min(rdc_listen_time(elapsed, rdc), max(0, elapsed - busy))
    else:
        listen = max(0, elapsed - busy)
    ledger.listen_time = max(ledger.listen_time, listen)


class BusyIntervals:
    """Union of recent radio-busy intervals of one node, so overlaps count once."""

    def __init__(self):
        self.spans: list[list[int]] = []

    def add(self, lo: int, hi: int) -> int:
        """Merge ``[lo, hi)`` in; returns how much of it was not yet covered."""
        if hi <= lo:
            return 0
        spans = [s for s in self.spans if s[1] >= lo - SEC]
        fresh = hi - lo
        keep = []
        for s in spans:
            if s[0] < hi and lo < s[1]:
                fresh -= min(s[1], hi) - max(s[0], lo)
                lo, hi = min(lo, s[0]), max(hi, s[1])
            else:
                keep.append(s)
        keep.append([lo, hi])
        keep.sort()
        self.spans = keep
        return fresh


@dataclass(eq=False)
class Frame:
    packet: Any
    src: int
    dst: int
    size: int
    retries: int = 0
    noacks: int = 0


class Mac:
    def __init__(self, node_id: int, sim, medium: Medium, cfg: MacConfig, rdc: RdcConfig,
                 ledger: EnergyLedger, rng, macs: list,
                 deliver: Callable[[Frame, int], None],
                 on_done: Callable[[Frame, bool], None],
                 on_attempt: Callable[[Frame], None] | None = None):
        self.id = node_id
        self.sim = sim
        self.medium = medium
        self.cfg = cfg
        self.rdc = rdc
        self.ledger = ledger
        self.rng = rng
        self.macs = macs
        self.deliver = deliver
        self.on_done = on_done
        self.on_attempt = on_attempt
        self.queue: deque[Frame] = deque()
        self.busy = False
        self.phase = rng.randrange(rdc.wake_interval) if rdc.enabled else 0
        self.busy_spans = BusyIntervals()
        self.locked: set[int] = set()
        self.queue_drops = 0
        self.attempts = 0
        self.link_drops = 0
        self._nb = 0
        self._be = cfg.min_backoff_exponent

    def mac_send(self, frame: Frame) -> str:
        if len(self.queue) >= self.cfg.queue_capacity:
            self.queue_drops += 1
            return QUEUE_FULL
        self.queue.append(frame)
        if not self.busy:
            self._start()
        return ACCEPTED

    send = mac_send

    # -- CSMA/CA --------------------------------------------------------------
    def _start(self) -> None:
        if not self.queue:
            self.busy = False
            return
        self.busy = True
        self._nb = 0
        self._be = self.cfg.min_backoff_exponent
        self._backoff(self.cfg.backoff_unit)

    def _retry_delay(self, failures: int) -> int:
        """Backoff after a busy channel or a failed attempt.

        Without duty cycling this is the 802.15.4 binary exponential backoff.
        With it, the timebase is one wake interval and the window grows
        linearly to three intervals, as in Contiki's CSMA; a few hundred
        microseconds would never outlast a strobe train.
        """
        if self.rdc.enabled and self.rdc.strobe_enabled:
            unit = self.rdc.wake_interval
            return unit + self.rng.randrange(min(failures + 1, 3) * unit)
        return self.rng.randrange(1 << self._be) * self.cfg.backoff_unit

    def _backoff(self, unit: int) -> None:
        slots = self.rng.randrange(1 << self._be)
        self.sim.schedule_in(slots * unit, self._cca, target=self.id)

    def _cca(self) -> None:
        if self.medium.channel_busy(self.id, self.sim.now):
            self._nb += 1
            if self._nb > self.cfg.max_csma_backoffs:
                self._attempt_failed(self.queue[0], busy=True)
                return
            self._be = min(self._be + 1, self.cfg.max_backoff_exponent)
            self.sim.schedule_in(self._retry_delay(self._nb), self._cca, target=self.id)
            return
        self._transmit()

    def _transmit(self) -> None:
        frame = self.queue[0]
        now = self.sim.now
        a = self.medium.airtime(frame.size)
        self.attempts += 1
        if self.on_attempt is not None:
            self.on_attempt(frame)
        rdc = self.rdc
        if not (rdc.enabled and rdc.strobe_enabled):
            receivers = sorted(self.medium.neighbors(self.id)) if frame.dst == BROADCAST else [frame.dst]
            tx = self.medium.begin(self.id, now, now + a, receivers)
            self.sim.schedule(now + a, self._end, tx, frame, a, now + a, target=self.id)
            return
        period = rdc.wake_interval
        copies = max(1, period // a)
        full_end = now + copies * a
        if frame.dst == BROADCAST:
            receivers = sorted(self.medium.neighbors(self.id))
            windows = {r: self._copy_window(now, a, copies, self.macs[r].phase, period) for r in receivers}
            tx = self.medium.begin(self.id, now, full_end, receivers, windows)
            self.sim.schedule(full_end, self._end, tx, frame, a, full_end, target=self.id)
            return
        win = self._copy_window(now, a, copies, self.macs[frame.dst].phase, period)
        if rdc.phase_lock and frame.dst in self.locked:
            # wake phase learnt from an earlier ack: sleep until just before it
            if win[0] > now:
                self.sim.schedule(win[0], self._locked_burst, frame, win, target=self.id)
            else:
                self._locked_burst(frame, win)
            return
        tx = self.medium.begin(self.id, now, win[1], [frame.dst], {frame.dst: win})
        self.sim.schedule(win[1], self._end, tx, frame, a, full_end, target=self.id)

    def _locked_burst(self, frame: Frame, win: tuple[int, int]) -> None:
        if self.medium.channel_busy(self.id, self.sim.now):
            self._nb += 1
            if self._nb > self.cfg.max_csma_backoffs:
                self._attempt_failed(frame, busy=True)
                return
            self._be = min(self._be + 1, self.cfg.max_backoff_exponent)
            self.sim.schedule_in(self._retry_delay(self._nb), self._cca, target=self.id)
            return
        tx = self.medium.begin(self.id, win[0], win[1], [frame.dst], {frame.dst: win})
        self.sim.schedule(win[1], self._end, tx, frame, win[1] - win[0], win[1], target=self.id)

    @staticmethod
    def _copy_window(start: int, a: int, copies: int, phase: int, period: int) -> tuple[int, int]:
        offset = (phase - start) % period
        idx = min(-(-offset // a), copies - 1)
        return start + idx * a, start + (idx + 1) * a

    def accrue_tx(self, lo: int, hi: int) -> None:
        fresh = self.busy_spans.add(lo, hi)
        self.ledger.tx_time += hi - lo
        # listening time that overlapped our own burst was not reception
        self.ledger.rx_time -= (hi - lo) - fresh

    def accrue_rx(self, lo: int, hi: int) -> None:
        self.ledger.rx_time += self.busy_spans.add(lo, hi)

    def _end(self, tx, frame: Frame, a: int, full_end: int) -> None:
        outcomes = self.medium.resolve(tx, self.rng)
        for oc in outcomes:
            if oc.result is Outcome.OUT_OF_RANGE:
                continue
            lo, hi = tx.window(oc.receiver)
            if oc.result is not Outcome.LOST_COLLISION or not self.medium.transmitting(oc.receiver, lo):
                self.macs[oc.receiver].accrue_rx(lo, hi)
        if frame.dst == BROADCAST:
            self.accrue_tx(tx.start, tx.end)
            for oc in outcomes:
                if oc.result is Outcome.DELIVERED:
                    self.deliver(frame, oc.receiver)
            self._finish(frame, True)
            return
        ok = outcomes[0].result is Outcome.DELIVERED
        if ok:
            self.locked.add(frame.dst)
            self.accrue_tx(tx.start, tx.end)
            self.deliver(frame, frame.dst)
            self._finish(frame, True)
            return
        if tx.end < full_end:
            # no ack: strobe runs out the wake interval before giving up
            self.medium.begin(self.id, tx.end, full_end, ())
            self.accrue_tx(tx.start, full_end)
            self.sim.schedule(full_end, self._attempt_failed, frame, target=self.id)
        else:
            self.accrue_tx(tx.start, tx.end)
            self._attempt_failed(frame)

    def _attempt_failed(self, frame: Frame, busy: bool = False) -> None:
        frame.retries += 1
        if not busy:
            frame.noacks += 1
        if frame.dst == BROADCAST or frame.retries > self.cfg.max_retries:
            self.link_drops += frame.dst != BROADCAST and frame.noacks > 0
            self._finish(frame, False)
            return
        self._nb = 0
        self._be = min(self.cfg.min_backoff_exponent + frame.retries, self.cfg.max_backoff_exponent)
        self.sim.schedule_in(self._retry_delay(frame.retries), self._cca, target=self.id)

    def _finish(self, frame: Frame, ok: bool) -> None:
        self.queue.popleft()
        self.on_done(frame, ok)
        self._start()
