"""SDN-WISE node: stateful WISE table, accepted-ID filter, TDM beaconing."""
from __future__ import annotations

import operator
from collections import deque
from dataclasses import dataclass, field
from typing import Any

from .kernel import seconds
from .mac import Frame, energy_mJ, rdc_listen_time
from .medium import BROADCAST
from .node import CONTROLLER, SIZES, SRH_BYTES_PER_HOP, BaseNode, Packet, next_slot

STATE_ARRAY_LEN = 16
HOP_INFINITE = 1 << 30

_RELATIONS = {"=": operator.eq, "!=": operator.ne, "<": operator.lt, ">": operator.gt}

UPWARD = frozenset({"REPORT", "REQUEST"})
DOWNWARD = frozenset({"CONFIG", "RESPONSE", "OPENPATH"})


@dataclass
class WiseConfig:
    beacon_period: int = seconds(5)
    report_period: int = seconds(60)
    table_capacity: int = 16
    buffer_capacity: int = 4
    entry_ttl: int = seconds(300)
    rule_mode: str = "openpath"
    request_timeout: int = seconds(5)
    request_max_retries: int = 2
    join_retry: int = seconds(15)

    def validate(self) -> list[str]:
        errors = []
        if self.beacon_period <= 0:
            errors.append("wise.beacon_period must be > 0")
        if self.report_period <= 0:
            errors.append("wise.report_period must be > 0")
        if self.table_capacity < 1:
            errors.append("wise.table_capacity must be >= 1")
        if self.buffer_capacity < 1:
            errors.append("wise.buffer_capacity must be >= 1")
        if self.rule_mode not in ("openpath", "per_hop"):
            errors.append("wise.rule_mode must be 'openpath' or 'per_hop'")
        return errors


@dataclass(frozen=True)
class Window:
    field: str
    relation: str
    value: int
    index: int = 0

    def holds(self, pkt: Packet, state: bytearray) -> bool:
        if self.field == "src":
            lhs = pkt.origin
        elif self.field == "dst":
            lhs = pkt.dest
        elif self.field == "type":
            lhs = pkt.kind
        elif self.field == "state":
            lhs = state[self.index]
        else:
            raise ValueError(f"unknown window field {self.field!r}")
        return _RELATIONS[self.relation](lhs, self.value)


@dataclass(frozen=True)
class WiseAction:
    kind: str  # forward | drop | modify_state | to_controller
    next_hop: int | None = None
    index: int = 0
    value: int = 0


@dataclass
class WiseEntry:
    windows: tuple
    action: WiseAction
    stats: int = 0
    ttl: int | None = seconds(300)
    installed_at: int = 0

    def __post_init__(self):
        if not 1 <= len(self.windows) <= 3:
            raise ValueError("a WISE entry carries between one and three windows")

    def matches(self, pkt: Packet, state: bytearray) -> bool:
        return all(w.holds(pkt, state) for w in self.windows)

    def expired(self, now: int) -> bool:
        return self.ttl is not None and now - self.installed_at >= self.ttl


class WiseTable:
    """First-match table with FIFO eviction."""

    def __init__(self, capacity: int = 16):
        self.capacity = capacity
        self.entries: list[WiseEntry] = []

    def __len__(self) -> int:
        return len(self.entries)

    def install(self, entry: WiseEntry) -> WiseEntry | None:
        for i, e in enumerate(self.entries):
            if e.windows == entry.windows:
                self.entries[i] = entry
                return None
        evicted = None
        if len(self.entries) >= self.capacity:
            evicted = self.entries.pop(0)
        self.entries.append(entry)
        return evicted

    def first_match(self, pkt: Packet, state: bytearray, now: int) -> WiseEntry | None:
        if any(e.expired(now) for e in self.entries):
            self.entries = [e for e in self.entries if not e.expired(now)]
        for e in self.entries:
            if e.matches(pkt, state):
                return e
        return None


@dataclass
class WiseNodeState:
    state_array: bytearray = field(default_factory=lambda: bytearray(STATE_ARRAY_LEN))
    accepted_ids: set = field(default_factory=set)
    next_hop_to_sink: int | None = None
    hop_distance: int = HOP_INFINITE


@dataclass
class WiseMessage:
    kind: str
    body: Any = None


@dataclass
class ReportBody:
    battery: float
    position: tuple
    neighbors: dict
    join: bool = False


@dataclass
class OpenPathBody:
    path: list
    query_id: int | None = None
    requester: int | None = None
    ttl: int | None = None


@dataclass
class ResponseBody:
    entries: list
    query_id: int | None = None
    requester: int | None = None


def forward_entry(dst: int, next_hop: int, ttl: int | None) -> WiseEntry:
    return WiseEntry((Window("dst", "=", dst),), WiseAction("forward", next_hop), ttl=ttl)


class WiseNode(BaseNode):
    def __init__(self, net, node_id: int):
        super().__init__(net, node_id)
        self.wcfg: WiseConfig = net.cfg.wise
        self.state = WiseNodeState(accepted_ids={node_id})
        self.table = WiseTable(self.wcfg.table_capacity)
        self.candidates: dict[int, tuple[int, float]] = {}
        self.pending: deque[Packet] = deque()
        self.outstanding: dict[int, tuple[int, int, int]] = {}
        self.asked: dict[int, tuple[int, int]] = {}
        self.reports_sent = 0
        self.beacons_sent = 0
        self._beacon_ev = None
        self._joined_reported = False

    # -- boot and TDM ---------------------------------------------------------
    def boot(self) -> None:
        if self.is_sink:
            self.state.hop_distance = 0
            self._start_beacons()
            self.net.gateway.up(self._control("REPORT", body=self._report_body(join=True)))

    def _control(self, kind: str, dest: int = CONTROLLER, body=None) -> Packet:
        self.net.count_msg(kind)
        return Packet(kind, self.id, dest, SIZES[kind], uid=self.net.next_uid(), created=self.sim.now, body=body)

    def _start_beacons(self) -> None:
        if self._beacon_ev is None:
            self._beacon_ev = self.sim.schedule_in(self.rng.randrange(self.wcfg.beacon_period),
                                                   self._beacon_tick, target=self.id)

    def _beacon_tick(self) -> None:
        self.wise_tdm_beacon()
        self._beacon_ev = self.sim.schedule_in(self.wcfg.beacon_period, self._beacon_tick, target=self.id)

    def wise_tdm_beacon(self) -> None:
        if self.state.hop_distance >= HOP_INFINITE:
            return
        self.beacons_sent += 1
        pkt = self._control("BEACON", dest=BROADCAST, body=self.state.hop_distance)
        pkt.nxhop = BROADCAST
        self.broadcast(pkt)

    def on_beacon(self, sender: int, hop: int) -> int | None:
        """Adopt the best advertised next hop; returns it when it changes."""
        if self.is_sink:
            return None
        if hop >= HOP_INFINITE:
            self.candidates.pop(sender, None)
        else:
            self.candidates[sender] = (hop, self.link_quality(sender))
        return self._reselect()

    def _reselect(self) -> int | None:
        st = self.state
        old = st.next_hop_to_sink
        best = None
        for cand, (hop, q) in self.candidates.items():
            key = (hop + 1, -q, cand)
            if best is None or key < best:
                best = key
        if best is None:
            st.next_hop_to_sink = None
            st.hop_distance = HOP_INFINITE
            return None
        st.hop_distance = best[0]
        st.next_hop_to_sink = best[2]
        if old is None:
            self._start_beacons()
            if not self.configured and not self._joined_reported:
                self._joined_reported = True
                self._join_report()
        return st.next_hop_to_sink if st.next_hop_to_sink != old else None

    def _join_report(self) -> None:
        """Send the joining Report, repeating it until a Config arrives."""
        if self.configured:
            return
        if self.state.next_hop_to_sink is not None:
            self.forward_up(self._control("REPORT", body=self._report_body(join=True)))
        self.sim.schedule_in(self.wcfg.join_retry, self._join_report, target=self.id)

    # -- frames ---------------------------------------------------------------
    def on_frame(self, frame: Frame) -> None:
        pkt = frame.packet
        if pkt.kind == "BEACON":
            self.on_beacon(frame.src, pkt.body)
            return
        if pkt.nxhop != BROADCAST and pkt.nxhop not in self.state.accepted_ids:
            self.net.drop(pkt, "filtered", self.id)
            return
        if pkt.kind == "WDATA":
            self.wise_handle_packet(pkt)
        elif pkt.kind in UPWARD:
            self.forward_up(pkt)
        elif pkt.kind in DOWNWARD:
            self._walk_control(pkt)

    def forward_up(self, pkt: Packet) -> None:
        if self.is_sink:
            self.net.gateway.up(pkt)
            return
        nh = self.state.next_hop_to_sink
        if nh is None:
            self.net.drop(pkt, "no_route", self.id)
            return
        pkt.trace.append(self.id)
        pkt.nxhop = nh
        self.send_to(pkt, nh)

    def inject_down(self, pkt: Packet, route_hint: list | None = None) -> None:
        if pkt.dest == self.id and not route_hint:
            self.on_control(pkt)
            return
        route = list(route_hint or [])
        if len(route) < 2 or route[0] != self.id:
            self.net.drop(pkt, "no_route", self.id)
            return
        from .usdn import SourceRoutingHeader
        pkt.srh = SourceRoutingHeader(route, 1)
        pkt.size += SRH_BYTES_PER_HOP * len(route)
        pkt.nxhop = route[1]
        self.send_to(pkt, route[1])

    def _walk_control(self, pkt: Packet) -> None:
        if pkt.kind == "OPENPATH":
            self._open_path_step(pkt)
        if pkt.srh.at_end:
            if pkt.kind != "OPENPATH":
                self.on_control(pkt)
            return
        nh = pkt.srh.advance()
        pkt.nxhop = nh
        self.send_to(pkt, nh)

    def on_control(self, pkt: Packet) -> None:
        if pkt.kind == "CONFIG":
            self.configure(pkt.body)
        elif pkt.kind == "RESPONSE":
            self._install_response(pkt)
        elif pkt.kind == "OPENPATH":
            self._open_path_step(pkt)

    def configure(self, body) -> None:
        first = not self.configured
        self.configured = True
        self.state.accepted_ids = {self.id} | set(body or ())
        if first:
            self.net.record_join(self.id)
            self._schedule_report()

    def _schedule_report(self) -> None:
        nxt = next_slot(self.sim.now, self.wcfg.report_period, self.report_phase)
        self.sim.schedule(nxt, self._report_tick, target=self.id)

    def _report_tick(self) -> None:
        self.wise_report()
        self._schedule_report()

    def residual_energy(self) -> float:
        led = self.ledger
        used = energy_mJ(led) + led.voltage * led.listen_current * rdc_listen_time(self.sim.now, self.net.cfg.rdc) / 1e6
        return self.net.cfg.energy.battery_mJ - used

    def _report_body(self, join: bool = False) -> ReportBody:
        return ReportBody(self.residual_energy(), self.position, self.neighbor_estimates(), join)

    def wise_report(self) -> Packet | None:
        if not self.configured:
            return None
        self.reports_sent += 1
        pkt = self._control("REPORT", body=self._report_body())
        self.forward_up(pkt)
        return pkt

    # -- data plane -----------------------------------------------------------
    def app_send(self, pkt: Packet) -> None:
        self.net.count_sent(pkt)
        pkt.nxhop = self.id
        self.wise_handle_packet(pkt)

    def wise_handle_packet(self, pkt: Packet) -> str:
        if pkt.nxhop != BROADCAST and pkt.nxhop not in self.state.accepted_ids:
            self.net.drop(pkt, "filtered", self.id)
            return "dropped"
        if pkt.dest == self.id:
            self.net.delivered(pkt, self.id)
            return "delivered"
        if not self.configured:
            self.net.drop(pkt, "not_configured", self.id)
            return "dropped"
        now = self.sim.now
        entry = self.table.first_match(pkt, self.state.state_array, now)
        if entry is None or entry.action.kind == "to_controller":
            return self._miss(pkt)
        entry.stats += 1
        return self._apply(entry, pkt)

    def _apply(self, entry: WiseEntry, pkt: Packet) -> str:
        act = entry.action
        if act.kind == "forward":
            if act.next_hop == self.id:
                self.net.delivered(pkt, self.id)
                return "delivered"
            pkt.nxhop = act.next_hop
            self.send_to(pkt, act.next_hop)
            return "forwarded"
        if act.kind == "modify_state":
            self.state.state_array[act.index] = act.value
            self.net.consumed(pkt, self.id)
            return "delivered"
        self.net.drop(pkt, "rule_drop", self.id)
        return "dropped"

    def _miss(self, pkt: Packet) -> str:
        if len(self.pending) >= self.wcfg.buffer_capacity:
            self.net.drop(self.pending.popleft(), "buffer_overflow", self.id)
        self.pending.append(pkt)
        self._request(pkt.dest, pkt)
        return "request_sent"

    def _request(self, dst: int, pkt: Packet, attempt: int = 0) -> None:
        if dst in self.outstanding:
            return
        qid = self.net.next_query_id()
        self.outstanding[dst] = (qid, self.sim.now, attempt)
        self.asked[qid] = (dst, self.sim.now)
        req = self._control("REQUEST", body=(pkt.origin, pkt.dest, pkt.flow_id))
        req.query_id = qid
        self.net.note_query(qid, self.id, self.sim.now)
        self.forward_up(req)
        self.sim.schedule_in(self.wcfg.request_timeout, self._request_timeout, dst, qid, target=self.id)

    def _request_timeout(self, dst: int, qid: int) -> None:
        cur = self.outstanding.get(dst)
        if cur is None or cur[0] != qid:
            return
        del self.outstanding[dst]
        waiting = [p for p in self.pending if p.dest == dst]
        if not waiting:
            return
        if cur[2] >= self.wcfg.request_max_retries:
            for p in waiting:
                self.pending.remove(p)
                self.net.drop(p, "no_rule", self.id)
            return
        self._request(dst, waiting[0], cur[2] + 1)

    def wise_open_path(self, body: OpenPathBody) -> int:
        """Install forward entries toward both ends of the path at this node."""
        path = body.path
        i = path.index(self.id)
        if i == 0:
            return 0
        ttl = body.ttl if body.ttl is not None else self.wcfg.entry_ttl
        now = self.sim.now
        far = path[i + 1] if i + 1 < len(path) else self.id
        for e in (forward_entry(path[-1], far, ttl), forward_entry(path[0], path[i - 1], ttl)):
            e.installed_at = now
            self.table.install(e)
        self.net.count_install(self.id, 2)
        return 2

    def _open_path_step(self, pkt: Packet) -> None:
        body: OpenPathBody = pkt.body
        self.wise_open_path(body)
        if self.id == body.requester:
            self._answered(body.query_id, pkt.fault_id)

    def _install_response(self, pkt: Packet) -> None:
        body: ResponseBody = pkt.body
        now = self.sim.now
        for e in body.entries:
            self.table.install(WiseEntry(e.windows, e.action, 0, e.ttl, now))
        self.net.count_install(self.id, len(body.entries))
        if body.requester == self.id:
            self._answered(body.query_id, pkt.fault_id)
        else:
            self._release()

    def _answered(self, query_id: int | None, fault_id: int | None) -> None:
        now = self.sim.now
        asked = self.asked.pop(query_id, None) if query_id is not None else None
        if asked is not None:
            dst, emitted = asked
            self.outstanding.pop(dst, None)
            self.net.record_rule_rtt(now - emitted)
        if fault_id is not None:
            self.net.fault_repaired(fault_id)
        self._release()

    def _release(self) -> int:
        now = self.sim.now
        released = 0
        still = deque()
        while self.pending:
            pkt = self.pending.popleft()
            entry = self.table.first_match(pkt, self.state.state_array, now)
            if entry is None or entry.action.kind == "to_controller":
                still.append(pkt)
                continue
            entry.stats += 1
            self._apply(entry, pkt)
            released += 1
        self.pending = still
        return released

    # -- failures -------------------------------------------------------------
    def on_link_drop(self, frame: Frame) -> None:
        pkt = frame.packet
        dst = frame.dst
        if dst == self.state.next_hop_to_sink and self.link_dead(dst):
            self.candidates.pop(dst, None)
            self._reselect()
        if pkt.kind == "WDATA" and self.configured:
            self.forward_up(self._control("REPORT", body=self._report_body()))
        if pkt.kind in UPWARD and self.state.next_hop_to_sink not in (None, dst):
            if pkt.trace and pkt.trace[-1] == self.id:
                pkt.trace.pop()
            self.forward_up(pkt)
            return
        self.net.drop(pkt, "link_drop", self.id)
