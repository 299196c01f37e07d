"""uSDN node: stateless flowtable, FTQ/FTS/NSU/CONF signalling, SRH forwarding."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Any

from .kernel import seconds
from .mac import Frame, energy_mJ, rdc_listen_time
from .node import CONTROLLER, SIZES, SRH_BYTES_PER_HOP, BaseNode, Packet, next_slot
from .rpl import DaoMessage, DioMessage, NoRoute, RplAgent

FORWARD_SRH = "forward_srh"
FORWARD_NEXT_HOP = "forward_next_hop"
TO_CONTROLLER = "to_controller"
DROP = "drop"

UPWARD = frozenset({"DAO", "FTQ", "NSU", "LINKFAIL"})
DOWNWARD = frozenset({"CONF", "FTS", "NOROUTE", "DEVICE"})


@dataclass
class UsdnConfig:
    nsu_period: int = seconds(60)
    flow_lifetime: int = seconds(300)
    table_capacity: int = 16
    buffer_capacity: int = 4
    sweep_interval: int = seconds(10)
    ftq_timeout: int = seconds(5)
    ftq_max_retries: int = 2
    join_retry: int = seconds(15)

    def validate(self) -> list[str]:
        errors = []
        if self.nsu_period <= 0:
            errors.append("usdn.nsu_period must be > 0")
        if self.flow_lifetime < 0:
            errors.append("usdn.flow_lifetime must be >= 0")
        if self.table_capacity < 1:
            errors.append("usdn.table_capacity must be >= 1")
        if self.buffer_capacity < 1:
            errors.append("usdn.buffer_capacity must be >= 1")
        if self.sweep_interval <= 0:
            errors.append("usdn.sweep_interval must be > 0")
        if self.join_retry <= 0:
            errors.append("usdn.join_retry must be > 0")
        return errors


@dataclass(frozen=True)
class Match:
    src: int | None = None
    dst: int | None = None
    flow_id: int | None = None

    @property
    def specificity(self) -> int:
        # flow_id > (src, dst) > single field > wildcard
        if self.flow_id is not None:
            return 3
        if self.src is not None and self.dst is not None:
            return 2
        if self.src is not None or self.dst is not None:
            return 1
        return 0

    def matches(self, src: int, dst: int, flow_id: int | None) -> bool:
        return ((self.src is None or self.src == src)
                and (self.dst is None or self.dst == dst)
                and (self.flow_id is None or self.flow_id == flow_id))


@dataclass(frozen=True)
class Action:
    kind: str
    route: tuple = ()
    next_hop: int | None = None


@dataclass
class FlowEntry:
    match: Match
    action: Action
    priority: int = 10
    installed_at: int = 0
    last_used: int = 0
    lifetime: int | None = seconds(300)
    refreshable: bool = False
    last_hit: int | None = None
    hits: int = 0

    def expired(self, now: int) -> bool:
        return self.lifetime is not None and now - self.last_used >= self.lifetime


class FlowTable:
    """Priority/specificity match table with idle lifetimes and LRU eviction."""

    def __init__(self, capacity: int = 16):
        self.capacity = capacity
        self.entries: list[FlowEntry] = []
        self.evictions = 0

    def __len__(self) -> int:
        return len(self.entries)

    def lookup(self, src: int, dst: int, flow_id: int | None, now: int) -> FlowEntry | None:
        best = None
        best_key = None
        expired = False
        for idx, e in enumerate(self.entries):
            if e.expired(now):
                expired = True
                continue
            if not e.match.matches(src, dst, flow_id):
                continue
            key = (-e.priority, -e.match.specificity, idx)
            if best_key is None or key < best_key:
                best, best_key = e, key
        if expired:
            self.entries = [e for e in self.entries if not e.expired(now)]
        return best

    def hit(self, entry: FlowEntry, now: int) -> None:
        entry.last_used = now
        entry.last_hit = now
        entry.hits += 1

    def install(self, entry: FlowEntry, now: int) -> FlowEntry | None:
        """Insert or replace by match; returns the evicted entry, if any."""
        for i, e in enumerate(self.entries):
            if e.match == entry.match:
                self.entries[i] = entry
                return None
        evicted = None
        if len(self.entries) >= self.capacity:
            pool = [e for e in self.entries if not e.refreshable] or self.entries
            evicted = min(pool, key=lambda e: e.last_used)
            self.entries.remove(evicted)
            self.evictions += 1
        self.entries.append(entry)
        return evicted

    def expire_and_refresh(self, now: int) -> tuple[list[FlowEntry], list[FlowEntry]]:
        evicted, refreshed, keep = [], [], []
        for e in self.entries:
            if e.expired(now):
                evicted.append(e)
                continue
            if (e.refreshable and e.lifetime is not None and e.last_hit is not None
                    and now - e.last_hit <= e.lifetime // 2):
                e.last_used = now
                refreshed.append(e)
            keep.append(e)
        self.entries = keep
        return evicted, refreshed


@dataclass
class SourceRoutingHeader:
    hops: list
    cursor: int = 1

    def __post_init__(self):
        if len(set(self.hops)) != len(self.hops):
            raise ValueError("source route hops must be pairwise distinct")
        if not 0 <= self.cursor < len(self.hops):
            raise ValueError("cursor out of range")

    @property
    def at_end(self) -> bool:
        return self.cursor == len(self.hops) - 1

    def advance(self) -> int:
        self.cursor += 1
        return self.hops[self.cursor]


@dataclass(frozen=True)
class FlowDigest:
    src: int
    dst: int
    flow_id: int | None


@dataclass
class NsuMetrics:
    residual_energy_mJ: float
    neighbors: dict
    queue_occupancy: int


@dataclass
class UsdnMessage:
    kind: str
    origin: int
    target: int
    body: Any = None


@dataclass
class ConfBody:
    entries: list
    nsu_period: int
    flow_lifetime: int


class UsdnNode(BaseNode):
    def __init__(self, net, node_id: int):
        super().__init__(net, node_id)
        ucfg: UsdnConfig = net.cfg.usdn
        self.ucfg = ucfg
        self.table = FlowTable(ucfg.table_capacity)
        self.pending: deque[Packet] = deque()
        self.outstanding: dict[tuple, tuple[int, int, int]] = {}
        self.asked: dict[int, tuple[tuple, int]] = {}
        self.nsu_period = ucfg.nsu_period
        self.flow_lifetime = ucfg.flow_lifetime
        self.nsu_sent = 0
        self._nsu_ev = None
        self._sweep_ev = None
        self._join_ev = None
        self._conf_asked: int | None = None
        self.rpl = RplAgent(node_id, net.sim, self.rng, net.cfg.rpl, is_root=self.is_sink,
                            send_dio=self._send_dio, send_dao=self._send_dao, send_dis=self._send_dis,
                            link_quality=self.link_quality, needs_conf=self._wants_conf,
                            on_parent_change=self._parent_changed)

    # -- boot -----------------------------------------------------------------
    def boot(self) -> None:
        self.rpl.boot()
        if self.is_sink:
            self.net.gateway.up(self._control("DAO", body=DaoMessage(self.id, self.id, needs_conf=True)))

    def _control(self, kind: str, dest: int = CONTROLLER, body=None, size: int | None = None) -> Packet:
        self.net.count_msg(kind)
        return Packet(kind, self.id, dest, size or SIZES[kind], uid=self.net.next_uid(),
                      created=self.sim.now, body=body)

    # -- RPL transport --------------------------------------------------------
    def _send_dio(self, dio: DioMessage) -> None:
        self.broadcast(self._control("DIO", dest=-1, body=dio))

    def _send_dis(self) -> None:
        self.broadcast(self._control("DIS", dest=-1))

    def _send_dao(self, dao: DaoMessage) -> None:
        self.forward_up(self._control("DAO", body=dao))

    def _parent_changed(self, old, new) -> None:
        if new is not None and not self.configured and self._join_ev is None:
            self._join_ev = self.sim.schedule_in(self.ucfg.join_retry, self._join_retry, target=self.id)

    def _wants_conf(self) -> bool:
        """Flag a DAO as a join request at most once per retry interval."""
        now = self.sim.now
        if self.configured or (self._conf_asked is not None and now - self._conf_asked < self.ucfg.join_retry):
            return False
        self._conf_asked = now
        return True

    def _join_retry(self) -> None:
        """Repeat the joining DAO until a CONF arrives."""
        self._join_ev = None
        if self.configured or not self.rpl.state.joined:
            return
        self.rpl.schedule_dao(0)
        self._join_ev = self.sim.schedule_in(self.ucfg.join_retry, self._join_retry, target=self.id)

    # -- frame dispatch -------------------------------------------------------
    def on_frame(self, frame: Frame) -> None:
        pkt = frame.packet
        kind = pkt.kind
        if kind == "DATA":
            self.usdn_handle_packet(pkt)
        elif kind == "DIO":
            self.rpl.on_dio(pkt.body)
        elif kind == "DIS":
            self.rpl.on_dis(frame.src)
        elif kind in UPWARD:
            self.forward_up(pkt)
        elif kind in DOWNWARD:
            self._walk_control(pkt)

    def forward_up(self, pkt: Packet) -> None:
        if self.is_sink:
            self.net.gateway.up(pkt)
            return
        parent = self.rpl.state.preferred_parent
        if parent is None:
            self.net.drop(pkt, "no_route", self.id)
            return
        pkt.trace.append(self.id)
        self.send_to(pkt, parent)

    def inject_down(self, pkt: Packet, route_hint: list | None = None) -> None:
        """Sink side: attach a source route toward ``pkt.dest`` and send it."""
        target = pkt.dest
        if target == self.id:
            self.on_control(pkt)
            return
        route = route_hint
        if route is None:
            try:
                route = self.rpl.table.build_source_route(target, self.sim.now)
            except NoRoute:
                self.net.drop(pkt, "no_route", self.id)
                return
        pkt.srh = SourceRoutingHeader(list(route), 1)
        pkt.size += SRH_BYTES_PER_HOP * len(route)
        self.send_to(pkt, route[1])

    def _walk_control(self, pkt: Packet) -> None:
        srh = pkt.srh
        if srh.at_end:
            self.on_control(pkt)
            return
        self.send_to(pkt, srh.advance())

    def on_control(self, pkt: Packet) -> None:
        if pkt.kind == "CONF":
            self.configure(pkt.body)
        elif pkt.kind == "FTS":
            self.usdn_install(pkt)
        elif pkt.kind == "NOROUTE":
            self._no_route(pkt)
        elif pkt.kind == "DEVICE":
            self.net.device_commands.append((self.sim.now, self.id, pkt.body))

    # -- configuration --------------------------------------------------------
    def configure(self, conf: ConfBody) -> None:
        now = self.sim.now
        first = not self.configured
        self.configured = True
        self.nsu_period = conf.nsu_period
        self.flow_lifetime = conf.flow_lifetime
        for e in conf.entries:
            self.table.install(FlowEntry(e.match, e.action, e.priority, now, now, e.lifetime, e.refreshable), now)
        if first:
            self.net.record_join(self.id)
            self._schedule_nsu()
            self._sweep_ev = self.sim.schedule_in(self.ucfg.sweep_interval, self._sweep, target=self.id)

    def _schedule_nsu(self) -> None:
        nxt = next_slot(self.sim.now, self.nsu_period, self.report_phase)
        self._nsu_ev = self.sim.schedule(nxt, self._nsu_tick, target=self.id)

    def _nsu_tick(self) -> None:
        self.usdn_emit_nsu()
        self._schedule_nsu()

    def _sweep(self) -> None:
        self.usdn_expire_and_refresh(self.sim.now)
        self._sweep_ev = self.sim.schedule_in(self.ucfg.sweep_interval, self._sweep, target=self.id)

    # -- data plane -----------------------------------------------------------
    def app_send(self, pkt: Packet) -> None:
        self.net.count_sent(pkt)
        self.usdn_handle_packet(pkt)

    def usdn_handle_packet(self, pkt: Packet) -> str:
        if pkt.srh is not None:
            srh = pkt.srh
            if srh.at_end:
                return self._deliver(pkt)
            self.send_to(pkt, srh.advance())
            return "forwarded"
        if pkt.dest == self.id:
            return self._deliver(pkt)
        if not self.configured:
            self.net.drop(pkt, "not_configured", self.id)
            return "dropped"
        now = self.sim.now
        entry = self.table.lookup(pkt.origin, pkt.dest, pkt.flow_id, now)
        if entry is None or entry.action.kind == TO_CONTROLLER:
            return self._miss(pkt)
        self.table.hit(entry, now)
        return self._apply(entry, pkt)

    def _apply(self, entry: FlowEntry, pkt: Packet) -> str:
        act = entry.action
        if act.kind == FORWARD_SRH:
            route = list(act.route)
            if route[0] != self.id or len(route) < 2:
                self.net.drop(pkt, "bad_route", self.id)
                return "dropped"
            pkt.srh = SourceRoutingHeader(route, 1)
            pkt.size += SRH_BYTES_PER_HOP * len(route)
            self.send_to(pkt, route[1])
            return "forwarded"
        if act.kind == FORWARD_NEXT_HOP:
            self.send_to(pkt, act.next_hop)
            return "forwarded"
        self.net.drop(pkt, "rule_drop", self.id)
        return "dropped"

    def _deliver(self, pkt: Packet) -> str:
        self.net.delivered(pkt, self.id)
        return "delivered"

    def _miss(self, pkt: Packet) -> str:
        if len(self.pending) >= self.ucfg.buffer_capacity:
            self.net.drop(self.pending.popleft(), "buffer_overflow", self.id)
        self.pending.append(pkt)
        self._query((pkt.dest, pkt.flow_id), pkt)
        return "queued_pending_rule"

    def _query(self, key: tuple, pkt: Packet, attempt: int = 0) -> None:
        if key in self.outstanding:
            return
        qid = self.net.next_query_id()
        self.outstanding[key] = (qid, self.sim.now, attempt)
        self.asked[qid] = (key, self.sim.now)
        ftq = self._control("FTQ", body=FlowDigest(pkt.origin, pkt.dest, pkt.flow_id))
        ftq.query_id = qid
        ftq.flow_id = pkt.flow_id
        self.net.note_query(qid, self.id, self.sim.now)
        self.forward_up(ftq)
        self.sim.schedule_in(self.ucfg.ftq_timeout, self._query_timeout, key, qid, target=self.id)

    def _query_timeout(self, key: tuple, qid: int) -> None:
        cur = self.outstanding.get(key)
        if cur is None or cur[0] != qid:
            return
        del self.outstanding[key]
        waiting = [p for p in self.pending if (p.dest, p.flow_id) == key]
        if not waiting:
            return
        if cur[2] >= self.ucfg.ftq_max_retries:
            for p in waiting:
                self.pending.remove(p)
                self.net.drop(p, "no_rule", self.id)
            return
        self._query(key, waiting[0], cur[2] + 1)

    def usdn_install(self, fts: Packet) -> int:
        """Install FTS entries and release buffered packets that now match."""
        now = self.sim.now
        for e in fts.body:
            self.table.install(FlowEntry(e.match, e.action, e.priority, now, now, e.lifetime, e.refreshable), now)
        asked = self.asked.pop(fts.query_id, None) if fts.query_id is not None else None
        if asked is not None:
            # a late answer to an earlier attempt still settles the flow
            key, emitted = asked
            self.outstanding.pop(key, None)
            self.net.record_rule_rtt(now - emitted)
        if fts.fault_id is not None:
            self.net.fault_repaired(fts.fault_id)
        return self._release()

    def _release(self) -> int:
        now = self.sim.now
        released = 0
        still = deque()
        while self.pending:
            pkt = self.pending.popleft()
            entry = self.table.lookup(pkt.origin, pkt.dest, pkt.flow_id, now)
            if entry is None or entry.action.kind == TO_CONTROLLER:
                still.append(pkt)
                continue
            self.table.hit(entry, now)
            self._apply(entry, pkt)
            released += 1
        self.pending = still
        return released

    def _no_route(self, pkt: Packet) -> None:
        digest = pkt.body
        key = (digest.dst, digest.flow_id)
        self.outstanding.pop(key, None)
        for p in [p for p in self.pending if (p.dest, p.flow_id) == key]:
            self.pending.remove(p)
            self.net.drop(p, "no_route", self.id)

    def usdn_expire_and_refresh(self, now: int):
        return self.table.expire_and_refresh(now)

    # -- state reports --------------------------------------------------------
    def residual_energy(self) -> float:
        led = self.ledger
        used = energy_mJ(led) + led.voltage * led.listen_current * rdc_listen_time(self.sim.now, self.net.cfg.rdc) / 1e6
        return self.net.cfg.energy.battery_mJ - used

    def usdn_emit_nsu(self) -> Packet | None:
        if not self.configured:
            return None
        self.nsu_sent += 1
        body = NsuMetrics(self.residual_energy(), self.neighbor_estimates(), len(self.mac.queue))
        pkt = self._control("NSU", body=body)
        self.forward_up(pkt)
        return pkt

    # -- failures -------------------------------------------------------------
    def on_link_drop(self, frame: Frame) -> None:
        pkt = frame.packet
        dst = frame.dst
        parent_changed = False
        if dst == self.rpl.state.preferred_parent and self.link_dead(dst):
            parent_changed = self.rpl.parent_lost(dst) is not None
        if pkt.kind == "DATA" and pkt.srh is not None:
            sig = self._control("LINKFAIL", body=(self.id, dst, self.sim.now))
            self.forward_up(sig)
        if pkt.kind in UPWARD and parent_changed and self.rpl.state.preferred_parent is not None:
            if pkt.trace and pkt.trace[-1] == self.id:
                pkt.trace.pop()
            self.forward_up(pkt)
            return
        self.net.drop(pkt, "link_drop", self.id)
