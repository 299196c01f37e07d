"""Unit-disk radio medium with distance loss and all-or-nothing interference."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .kernel import SEC

BROADCAST = -1


@dataclass
class MediumConfig:
    tx_range: float = 50.0
    interference_range: float = 50.0
    link_quality: float = 0.90
    distance_loss: bool = True
    collisions: bool = True
    phy_rate_bps: int = 250_000

    def validate(self) -> list[str]:
        errors = []
        if not self.tx_range > 0:
            errors.append("medium.tx_range must be > 0")
        if self.interference_range < self.tx_range:
            errors.append("medium.interference_range must be >= tx_range")
        if not 0.0 <= self.link_quality <= 1.0:
            errors.append("medium.link_quality must lie in [0, 1]")
        if self.phy_rate_bps <= 0:
            errors.append("medium.phy_rate_bps must be > 0")
        return errors


def reception_probability(distance: float, cfg: MediumConfig) -> float:
    """Per-attempt reception probability at ``distance`` metres.

    Inside the disk this is ``q * (1 - (d/R)^2)`` with distance loss, or the
    flat ``q`` without it; outside the disk it is zero.
    """
    if distance < 0:
        raise ValueError("distance must be non-negative")
    if distance > cfg.tx_range:
        return 0.0
    if not cfg.distance_loss:
        return cfg.link_quality
    return cfg.link_quality * (1.0 - (distance / cfg.tx_range) ** 2)


class Outcome(str, enum.Enum):
    DELIVERED = "delivered"
    LOST_CHANNEL = "lost_channel"
    LOST_COLLISION = "lost_collision"
    OUT_OF_RANGE = "out_of_range"


@dataclass(frozen=True)
class TransmissionOutcome:
    receiver: int
    result: Outcome


@dataclass(eq=False)
class Transmission:
    sender: int
    start: int
    end: int
    receivers: tuple
    # per-receiver reception window (start, end); defaults to the whole burst
    windows: dict = field(default_factory=dict)

    def window(self, receiver: int) -> tuple[int, int]:
        return self.windows.get(receiver, (self.start, self.end))


def pairwise_distances(positions: np.ndarray) -> np.ndarray:
    diff = positions[:, None, :] - positions[None, :, :]
    return np.sqrt((diff ** 2).sum(axis=-1))


class Medium:
    """Shared channel for one run.

    Transmissions are registered when they start and resolved when they end,
    so every overlap is known at resolution time.
    """

    # records older than this are irrelevant to any pending resolution
    HISTORY = 2 * SEC

    def __init__(self, positions: Sequence[Sequence[float]], cfg: MediumConfig, rng=None):
        self.cfg = cfg
        self.positions = np.asarray(positions, dtype=float).reshape(-1, 2)
        self.n = len(self.positions)
        self.rng = rng
        self.dist = pairwise_distances(self.positions)
        n = self.n
        self._neighbors = []
        self._interferers = []
        for i in range(n):
            row = self.dist[i]
            self._neighbors.append(frozenset(j for j in range(n) if j != i and row[j] <= cfg.tx_range))
            self._interferers.append(frozenset(j for j in range(n) if j != i and row[j] <= cfg.interference_range))
        self._quality = {}
        for i in range(n):
            for j in self._neighbors[i]:
                self._quality[(i, j)] = reception_probability(float(self.dist[i, j]), cfg)
        self.failed: set[tuple[int, int]] = set()
        self.active: list[Transmission] = []

    # -- topology -------------------------------------------------------------
    def neighbors(self, node: int) -> frozenset:
        return self._neighbors[node]

    def live_neighbors(self, node: int) -> list[int]:
        return sorted(j for j in self._neighbors[node] if self.link_quality(node, j) > 0.0)

    def link_quality(self, a: int, b: int) -> float:
        if (min(a, b), max(a, b)) in self.failed:
            return 0.0
        return self._quality.get((a, b), 0.0)

    def graph_edges(self) -> set[tuple[int, int]]:
        return {(i, j) for i in range(self.n) for j in self._neighbors[i] if i < j}

    def fail_link(self, a: int, b: int) -> None:
        self.failed.add((min(a, b), max(a, b)))

    def restore_link(self, a: int, b: int) -> None:
        self.failed.discard((min(a, b), max(a, b)))

    def airtime(self, nbytes: int) -> int:
        return int(math.ceil(nbytes * 8 * SEC / self.cfg.phy_rate_bps))

    # -- channel --------------------------------------------------------------
    def channel_busy(self, node: int, now: int) -> bool:
        """Clear-channel assessment: any ongoing burst audible at ``node``."""
        heard = self._interferers[node]
        for tx in self.active:
            if tx.start <= now < tx.end and (tx.sender in heard or tx.sender == node):
                return True
        return False

    def transmitting(self, node: int, now: int) -> bool:
        for tx in self.active:
            if tx.sender == node and tx.start <= now < tx.end:
                return True
        return False

    def begin(self, sender: int, start: int, end: int, receivers: Sequence[int],
              windows: dict | None = None) -> Transmission:
        cutoff = start - self.HISTORY
        if self.active and self.active[0].end < cutoff:
            self.active = [tx for tx in self.active if tx.end >= cutoff]
        tx = Transmission(sender, int(start), int(end), tuple(receivers), windows or {})
        self.active.append(tx)
        return tx

    def collided(self, tx: Transmission, receiver: int) -> bool:
        if not self.cfg.collisions:
            return False
        lo, hi = tx.window(receiver)
        heard = self._interferers[receiver]
        for other in self.active:
            if other is tx or other.sender == tx.sender:
                continue
            if other.start < hi and lo < other.end and (other.sender in heard or other.sender == receiver):
                return True
        return False

    def resolve(self, tx: Transmission, rng=None) -> list[TransmissionOutcome]:
        """Decide the fate of ``tx`` at every addressed receiver."""
        rng = rng or self.rng
        out = []
        for r in tx.receivers:
            if r not in self._neighbors[tx.sender]:
                out.append(TransmissionOutcome(r, Outcome.OUT_OF_RANGE))
            elif self.collided(tx, r):
                out.append(TransmissionOutcome(r, Outcome.LOST_COLLISION))
            else:
                p = self.link_quality(tx.sender, r)
                ok = p >= 1.0 or (p > 0.0 and rng.random() < p)
                out.append(TransmissionOutcome(r, Outcome.DELIVERED if ok else Outcome.LOST_CHANNEL))
        return out

    def broadcast(self, sender: int, nbytes: int, at: int) -> Transmission:
        """Register a broadcast burst to every in-range node.

        Outcomes depend on bursts that start later but overlap, so they are
        read with :meth:`resolve` once all concurrent senders are registered.
        """
        receivers = sorted(self._neighbors[sender])
        return self.begin(sender, at, at + self.airtime(nbytes), receivers)
