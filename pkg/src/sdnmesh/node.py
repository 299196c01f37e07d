"""Packets and the radio-owning base node shared by both SDN stacks."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

from .mac import QUEUE_FULL, EnergyLedger, Frame, Mac
from .medium import BROADCAST

CONTROLLER = -2

# on-air sizes in bytes, MAC + adaptation headers included; data kinds list
# headers only and carry the scenario's payload on top
SIZES = {
    # RPL
    "DIO": 64, "DIS": 24, "DAO": 48,
    # uSDN
    "FTQ": 38, "FTS": 44, "NSU": 48, "CONF": 44, "LINKFAIL": 36, "NOROUTE": 30, "DEVICE": 32,
    "DATA": 24,
    # SDN-WISE
    "BEACON": 20, "REPORT": 44, "REQUEST": 38, "RESPONSE": 44, "OPENPATH": 30, "CONFIG": 40,
    "WDATA": 18,
}
SRH_BYTES_PER_HOP = 2

DATA_KINDS = frozenset({"DATA", "WDATA"})


@dataclass(eq=False)
class Packet:
    kind: str
    origin: int
    dest: int
    size: int
    uid: int = 0
    created: int = 0
    body: Any = None
    flow_id: int | None = None
    srh: Any = None
    nxhop: int | None = None
    trace: list = field(default_factory=list)
    query_id: int | None = None
    fault_id: int | None = None

    @property
    def is_data(self) -> bool:
        return self.kind in DATA_KINDS


def next_slot(now: int, period: int, phase: int) -> int:
    """First instant after ``now`` that is ``phase`` modulo ``period``."""
    return now + ((phase - now) % period or period)


class BaseNode:
    """Owns the MAC, energy ledger and RNG stream of one mote."""

    def __init__(self, net, node_id: int):
        self.net = net
        self.id = node_id
        self.sim = net.sim
        self.is_sink = node_id == net.sink
        self.rng = net.sim.rng(node_id)
        self.ledger = EnergyLedger(**net.cfg.energy.ledger_kwargs())
        self.mac = Mac(node_id, net.sim, net.medium, net.cfg.mac, net.cfg.rdc, self.ledger, self.rng,
                       net.macs, net.deliver_frame, self.on_mac_done, net.count_attempt)
        net.macs.append(self.mac)
        self.configured = False
        self.fail_streak: dict[int, int] = {}
        # offset of this node's periodic state reports, so they do not all fire together
        self.report_phase = self.rng.randrange(1 << 40)

    @property
    def position(self) -> tuple[float, float]:
        x, y = self.net.medium.positions[self.id]
        return float(x), float(y)

    def send_to(self, packet: Packet, next_hop: int) -> bool:
        frame = Frame(packet, self.id, next_hop, packet.size)
        if self.mac.mac_send(frame) == QUEUE_FULL:
            self.net.drop(packet, "queue_full", self.id)
            return False
        return True

    def broadcast(self, packet: Packet) -> bool:
        frame = Frame(packet, self.id, BROADCAST, packet.size)
        if self.mac.mac_send(frame) == QUEUE_FULL:
            self.net.drop(packet, "queue_full", self.id)
            return False
        return True

    def link_quality(self, neighbor: int) -> float:
        return self.net.medium.link_quality(self.id, neighbor)

    def neighbor_estimates(self) -> dict[int, float]:
        medium = self.net.medium
        return {j: medium.link_quality(self.id, j) for j in medium.live_neighbors(self.id)}

    def on_mac_done(self, frame: Frame, ok: bool) -> None:
        if frame.dst == BROADCAST:
            return
        if ok:
            self.fail_streak.pop(frame.dst, None)
            return
        if frame.noacks == 0:
            # never got on the air: the channel stayed busy, the link is not to blame
            self.net.drop(frame.packet, "channel_busy", self.id)
            return
        self.fail_streak[frame.dst] = self.fail_streak.get(frame.dst, 0) + 1
        self.net.note_link_drop(self.id, frame.dst)
        self.on_link_drop(frame)

    def link_dead(self, neighbor: int) -> bool:
        """True once enough back-to-back frames to ``neighbor`` went unacked."""
        return self.fail_streak.get(neighbor, 0) >= self.net.cfg.mac.link_fail_limit

    def on_link_drop(self, frame: Frame) -> None:
        self.net.drop(frame.packet, "link_drop", self.id)

    def on_frame(self, frame: Frame) -> None:  # pragma: no cover - overridden
        raise NotImplementedError

    # application hook, overridden by each stack
    def app_send(self, packet: Packet) -> None:  # pragma: no cover - overridden
        raise NotImplementedError
