"""Embedded and external SDN controllers behind one interface.

A controller is a single FIFO server with a deterministic service time per
request. The external placement sits behind a serial backhaul: every
request and response pays a one-way propagation delay plus serialization
of its bytes at the link rate. Both are simulated in the node event loop.
"""
from __future__ import annotations

import heapq
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Any

from .kernel import SEC, millis
from .node import CONTROLLER, SIZES, Packet
from .usdn import (FORWARD_SRH, TO_CONTROLLER, Action, ConfBody, FlowDigest, FlowEntry, Match,
                   NsuMetrics)
from .wise import OpenPathBody, ReportBody, ResponseBody, WiseAction, WiseEntry, Window

JOIN = "join"
FLOW_QUERY = "flow_query"
STATE_UPDATE = "state_update"
LINK_FAILURE = "link_failure"
DEVICE = "device"

SUBSYSTEM_FOR = {
    JOIN: "sensor_node_registry",
    FLOW_QUERY: "flow_rule_service",
    STATE_UPDATE: "packet_service",
    LINK_FAILURE: "packet_service",
    DEVICE: "device_control_service",
}


@dataclass
class ControllerPlacement:
    kind: str = "embedded"
    backhaul_delay: int = 0
    backhaul_rate: float = 115200.0
    service_time: int = millis(8)
    queue_capacity: int = 64

    @classmethod
    def embedded(cls, **kw) -> "ControllerPlacement":
        kw.setdefault("service_time", millis(8))
        return cls(kind="embedded", backhaul_delay=0, **kw)

    @classmethod
    def external(cls, **kw) -> "ControllerPlacement":
        kw.setdefault("service_time", millis(1))
        kw.setdefault("backhaul_delay", millis(2))
        return cls(kind="external", **kw)

    def validate(self) -> list[str]:
        errors = []
        if self.kind not in ("embedded", "external"):
            errors.append("placement.kind must be 'embedded' or 'external'")
        if self.kind == "embedded" and self.backhaul_delay != 0:
            errors.append("placement.backhaul_delay must be 0 for an embedded controller")
        if self.backhaul_delay < 0:
            errors.append("placement.backhaul_delay must be >= 0")
        if not self.backhaul_rate > 0:
            errors.append("placement.backhaul_rate must be > 0")
        if self.service_time <= 0:
            errors.append("placement.service_time must be > 0")
        if self.queue_capacity < 1:
            errors.append("placement.queue_capacity must be >= 1")
        return errors

    @property
    def external_link(self) -> bool:
        return self.kind == "external"

    def serialization(self, nbytes: int) -> int:
        if not self.external_link:
            return 0
        return int(math.ceil(nbytes * 8 * SEC / self.backhaul_rate))

    def one_way(self, nbytes: int) -> int:
        if not self.external_link:
            return 0
        return self.backhaul_delay + self.serialization(nbytes)

    @property
    def capacity(self) -> float:
        """Saturation throughput in requests per second."""
        return SEC / self.service_time


def ctrl_processing_delay(placement: ControllerPlacement, load: int = 0,
                          request_bytes: int = 0, response_bytes: int = 0) -> int:
    """Response time seen at the sink when ``load`` requests are queued ahead."""
    return (load + 1) * placement.service_time + placement.one_way(request_bytes) + placement.one_way(response_bytes)


def dd1_response_times(placement: ControllerPlacement, rate: float, count: int,
                       request_bytes: int = 0, response_bytes: int = 0) -> list[int]:
    """Response times for ``count`` evenly spaced arrivals at ``rate`` per second.

    Arrival k lands at k*T. The server starts it once the previous one is
    done, so below saturation every request sees exactly one service time;
    above it the backlog grows by S - T per arrival.
    """
    period = SEC / rate
    s = placement.service_time
    overhead = placement.one_way(request_bytes) + placement.one_way(response_bytes)
    out = []
    free = 0.0
    for k in range(count):
        arrival = math.ceil(k * period)
        start = max(arrival, free)
        free = start + s
        out.append(int(free - arrival) + overhead)
    return out


def md1_mean_response(placement: ControllerPlacement, rate: float,
                      request_bytes: int = 0, response_bytes: int = 0) -> float:
    """Mean response time (microseconds) for Poisson arrivals; inf at or past saturation."""
    s = placement.service_time
    rho = rate * s / SEC
    if rho >= 1:
        return math.inf
    wait = rho * s / (2 * (1 - rho))
    return s + wait + placement.one_way(request_bytes) + placement.one_way(response_bytes)


@dataclass
class NodeRecord:
    last_seen: int
    energy: float | None = None
    position: tuple | None = None


class TopologyView:
    """Controller-side picture of nodes and undirected links."""

    def __init__(self):
        self.nodes: dict[int, NodeRecord] = {}
        self.links: dict[tuple[int, int], float] = {}
        self.routes: dict[tuple, list | None] = {}
        self._adj: dict[int, dict[int, float]] = {}

    @staticmethod
    def key(a: int, b: int) -> tuple[int, int]:
        return (a, b) if a < b else (b, a)

    def touch(self, node: int, now: int, energy=None, position=None) -> NodeRecord:
        rec = self.nodes.get(node)
        if rec is None:
            rec = self.nodes[node] = NodeRecord(now, energy, position)
            self._adj.setdefault(node, {})
            self.routes.clear()
        else:
            rec.last_seen = now
            if energy is not None:
                rec.energy = energy
            if position is not None:
                rec.position = position
        return rec

    def add_link(self, a: int, b: int, quality: float = 1.0) -> bool:
        if a == b or a not in self.nodes or b not in self.nodes:
            return False
        k = self.key(a, b)
        new = k not in self.links
        self.links[k] = quality
        self._adj[a][b] = quality
        self._adj[b][a] = quality
        if new:
            self.routes.clear()
        return new

    def remove_link(self, a: int, b: int) -> bool:
        k = self.key(a, b)
        if k not in self.links:
            return False
        del self.links[k]
        self._adj[a].pop(b, None)
        self._adj[b].pop(a, None)
        for rk, path in list(self.routes.items()):
            if path is not None and _uses_link(path, a, b):
                del self.routes[rk]
        return True

    def set_neighbors(self, node: int, neighbors: dict[int, float]) -> tuple[list, list]:
        """Replace ``node``'s reported links; returns (added, removed) link keys."""
        added, removed = [], []
        for other in list(self._adj.get(node, {})):
            if other not in neighbors:
                self.remove_link(node, other)
                removed.append(self.key(node, other))
        for other, q in neighbors.items():
            if other in self.nodes:
                if self.add_link(node, other, q):
                    added.append(self.key(node, other))
        return added, removed

    def neighbors(self, node: int) -> dict[int, float]:
        return self._adj.get(node, {})

    def shortest_path(self, src: int, dst: int, weighting: str = "hop") -> list[int] | None:
        rk = (src, dst, weighting)
        if rk in self.routes:
            path = self.routes[rk]
            return None if path is None else list(path)
        if src not in self.nodes or dst not in self.nodes:
            return None
        path = _bfs(self._adj, src, dst) if weighting == "hop" else _dijkstra(self._adj, src, dst)
        self.routes[rk] = path
        return None if path is None else list(path)


def _uses_link(path: list, a: int, b: int) -> bool:
    for u, v in zip(path, path[1:]):
        if (u == a and v == b) or (u == b and v == a):
            return True
    return False


def _bfs(adj: dict, src: int, dst: int) -> list | None:
    if src == dst:
        return [src]
    prev = {src: None}
    frontier = [src]
    while frontier:
        nxt = []
        for u in frontier:
            for v in sorted(adj.get(u, ())):
                if v in prev:
                    continue
                prev[v] = u
                if v == dst:
                    return _unwind(prev, dst)
                nxt.append(v)
        frontier = nxt
    return None


def _dijkstra(adj: dict, src: int, dst: int) -> list | None:
    dist = {src: 0.0}
    prev = {src: None}
    heap = [(0.0, src)]
    done = set()
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        if u == dst:
            return _unwind(prev, dst)
        for v, q in sorted(adj.get(u, {}).items()):
            if q <= 0:
                continue
            nd = d + 1.0 / q
            if v not in dist or nd < dist[v] - 1e-12:
                dist[v] = nd
                prev[v] = u
                heapq.heappush(heap, (nd, v))
    return None


def _unwind(prev: dict, dst: int) -> list:
    path = [dst]
    while prev[path[-1]] is not None:
        path.append(prev[path[-1]])
    path.reverse()
    return path


@dataclass
class ControllerRequest:
    kind: str
    arrival: int
    origin: int
    packet: Packet | None = None
    size: int = 0
    answered: bool = False


@dataclass
class SubsystemSet:
    sensor_node_registry: dict = field(default_factory=dict)
    flow_rule_service: list = field(default_factory=list)
    packet_service: list = field(default_factory=list)
    device_control_service: list = field(default_factory=list)

    def dispatch(self, req: ControllerRequest) -> str:
        name = SUBSYSTEM_FOR[req.kind]
        if name != "sensor_node_registry":
            getattr(self, name).append((req.arrival, req.origin))
        return name


@dataclass
class FlowRecord:
    requester: int
    src: int
    dst: int
    flow_id: int | None
    path: list
    installed: int


class Controller:
    """Request server plus the SDN application logic for one stack."""

    def __init__(self, net, placement: ControllerPlacement, stack: str, weighting: str | None = None,
                 rule_mode: str = "openpath"):
        self.net = net
        self.sim = net.sim
        self.placement = placement
        self.stack = stack
        self.weighting = weighting or ("quality" if stack == "usdn" else "hop")
        self.rule_mode = rule_mode
        self.view = TopologyView()
        self.subsystems = SubsystemSet()
        self.flows: dict[tuple, FlowRecord] = {}
        self.in_system: deque[int] = deque()
        self.free_at = 0
        self.admitted = 0
        self.served = 0
        self.dropped = 0
        self.unreachable = 0
        self.responses: dict[str, int] = {}
        self.response_times: list[int] = []
        self.flow_response_times: list[int] = []
        self.served_times: list[int] = []
        self.trace: list[tuple] = []
        self.known_down: set = set()
        self.touched: set = set()

    # -- queueing -------------------------------------------------------------
    def backlog(self, now: int) -> int:
        q = self.in_system
        while q and q[0] <= now:
            q.popleft()
        return len(q)

    def submit(self, req: ControllerRequest) -> bool:
        """Request reaches the controller; admit it or drop on a full queue."""
        now = self.sim.now
        if self.backlog(now) >= self.placement.queue_capacity:
            self.dropped += 1
            self.net.count_ctrl_drop(req.kind)
            return False
        start = max(now, self.free_at)
        self.free_at = start + self.placement.service_time
        self.in_system.append(self.free_at)
        self.admitted += 1
        self.sim.schedule(self.free_at, self._serve, req, target=CONTROLLER)
        return True

    def _serve(self, req: ControllerRequest) -> None:
        self.touched = set()
        self.served += 1
        self.served_times.append(self.sim.now)
        self.subsystems.dispatch(req)
        handler = {
            JOIN: self.ctrl_on_join,
            FLOW_QUERY: self.ctrl_on_flow_query,
            STATE_UPDATE: self.ctrl_on_state_update,
            LINK_FAILURE: self._on_link_failure_request,
            DEVICE: self._on_device,
        }[req.kind]
        out = handler(req) or []
        if self.touched:
            # the notice is handled once its last update or repair has left the border
            done = self.sim.now + max((self.placement.one_way(p.size) for p, _ in out), default=0)
            for fid in sorted(self.touched):
                self.net.fault_notice_handled(fid, req.arrival, done)
        self.trace.append((self.sim.now, req.kind, req.origin, tuple((p.kind, p.dest) for p, _ in out)))
        for pkt, hint in out:
            self.responses[pkt.kind] = self.responses.get(pkt.kind, 0) + 1
            self.net.gateway.down(pkt, hint, req)

    def _packet(self, kind: str, dest: int, body: Any = None, **kw) -> Packet:
        self.net.count_msg(kind)
        pkt = Packet(kind, CONTROLLER, dest, SIZES[kind], uid=self.net.next_uid(), created=self.sim.now,
                     body=body)
        for k, v in kw.items():
            setattr(pkt, k, v)
        return pkt

    def _hint(self, dest: int) -> list | None:
        """Downward route: root tree for uSDN unless the view knows it is broken."""
        sink = self.net.sink
        if self.stack == "usdn":
            table = self.net.nodes[sink].rpl.table
            try:
                route = table.build_source_route(dest, self.sim.now)
            except LookupError:
                route = None
            if route is not None and all(self._link_ok(u, v) for u, v in zip(route, route[1:])):
                return None
        return self.view.shortest_path(sink, dest, self.weighting)

    def _link_ok(self, a: int, b: int) -> bool:
        k = TopologyView.key(a, b)
        return k in self.view.links or k not in self.known_down

    # -- handlers -------------------------------------------------------------
    def ctrl_on_join(self, req: ControllerRequest):
        now = self.sim.now
        pkt = req.packet
        origin = req.origin
        self.view.touch(origin, now)
        self.subsystems.sensor_node_registry[origin] = now
        sink = self.net.sink
        if self.stack == "usdn":
            dao = pkt.body
            if dao.parent != origin:
                self.view.touch(dao.parent, now)
                self.view.add_link(origin, dao.parent, self.net.medium.link_quality(origin, dao.parent))
            rule = FlowEntry(Match(), Action(TO_CONTROLLER), priority=0, lifetime=None)
            conf = self._packet("CONF", origin, ConfBody([rule], self.net.cfg.usdn.nsu_period,
                                                         self.net.cfg.usdn.flow_lifetime))
            return [(conf, None if origin == sink else self._hint(origin))]
        body: ReportBody = pkt.body
        self.view.touch(origin, now, body.battery, body.position)
        self.view.set_neighbors(origin, body.neighbors)
        if origin == sink:
            path = [sink]
        else:
            path = [sink] + list(reversed(pkt.trace))
            if len(set(path)) != len(path):
                path = self.view.shortest_path(sink, origin, self.weighting)
        cfg = self._packet("CONFIG", origin, ())
        return [(cfg, path if origin != sink else None)]

    def ctrl_on_state_update(self, req: ControllerRequest):
        now = self.sim.now
        origin = req.origin
        if origin not in self.subsystems.sensor_node_registry:
            if self.stack != "usdn":
                return self.ctrl_on_join(req)
            self.subsystems.sensor_node_registry[origin] = now
        body = req.packet.body
        if isinstance(body, NsuMetrics):
            self.view.touch(origin, now, body.residual_energy_mJ)
            neighbors = body.neighbors
        else:
            self.view.touch(origin, now, body.battery, body.position)
            neighbors = body.neighbors
        _, removed = self.view.set_neighbors(origin, neighbors)
        self.subsystems.device_control_service.append(("metrics", origin, now))
        if not removed:
            return None
        return self._repair(removed)

    def ctrl_on_flow_query(self, req: ControllerRequest):
        pkt = req.packet
        origin = req.origin
        if self.stack == "usdn":
            digest: FlowDigest = pkt.body
            path = self.view.shortest_path(origin, digest.dst, self.weighting)
            if path is None or len(path) < 2:
                self.unreachable += 1
                nr = self._packet("NOROUTE", origin, digest, query_id=pkt.query_id)
                return [(nr, self._hint(origin))]
            self.flows[(origin, digest.src, digest.dst, digest.flow_id)] = FlowRecord(
                origin, digest.src, digest.dst, digest.flow_id, path, self.sim.now)
            fts = self._packet("FTS", origin, [self._usdn_rule(digest, path)],
                               query_id=pkt.query_id, flow_id=digest.flow_id)
            return [(fts, self._hint(origin))]
        src, dst, flow_id = pkt.body
        path = self.view.shortest_path(origin, dst, self.weighting)
        if path is None or len(path) < 2:
            self.unreachable += 1
            return None
        self.flows[(origin, src, dst, flow_id)] = FlowRecord(origin, src, dst, flow_id, path, self.sim.now)
        return self._wise_rules(path, pkt.query_id, origin)

    def _usdn_rule(self, digest: FlowDigest, path: list) -> FlowEntry:
        match = Match(dst=digest.dst, flow_id=digest.flow_id) if digest.flow_id is not None else Match(dst=digest.dst)
        return FlowEntry(match, Action(FORWARD_SRH, tuple(path)), priority=10,
                         lifetime=self.net.cfg.usdn.flow_lifetime, refreshable=True)

    def _wise_rules(self, path: list, query_id, requester: int, fault_id=None):
        """Rules for a flow from ``path[0]`` to ``path[-1]`` in the configured mode."""
        sink = self.net.sink
        ttl = self.net.cfg.wise.entry_ttl
        route = path[::-1] if path[-1] == sink and path[0] == requester else None
        if self.rule_mode == "openpath" and route is not None:
            # the OpenPath packet leaves the sink and ends at the requester
            op = self._packet("OPENPATH", requester,
                              OpenPathBody(list(route), query_id, requester, ttl),
                              query_id=query_id, fault_id=fault_id)
            op.size += 2 * len(route)
            return [(op, route)]
        out = []
        # nodes nearest the destination first, so their rules are in place before traffic arrives
        for i in reversed(range(len(path) - 1)):
            node = path[i]
            if node == sink and node != requester:
                continue
            entries = [WiseEntry((Window("dst", "=", path[-1]),), WiseAction("forward", path[i + 1]), ttl=ttl)]
            resp = self._packet("RESPONSE", node, ResponseBody(entries, query_id, requester),
                                query_id=query_id, fault_id=fault_id)
            out.append((resp, self.view.shortest_path(sink, node, self.weighting)))
        return out

    # -- failures -------------------------------------------------------------
    def _on_link_failure_request(self, req: ControllerRequest):
        a, b, _ = req.packet.body
        return self.ctrl_on_link_failure({TopologyView.key(a, b)}, self.sim.now)

    def ctrl_on_link_failure(self, failed: set, now: int | None = None):
        gone = [k for k in sorted(failed) if self.view.remove_link(*k)]
        return self._repair(gone) if gone else []

    def _repair(self, links: list):
        """Recompute every recorded flow whose path crosses one of ``links``."""
        out = []
        links = list(links)
        self.known_down.update(links)
        fault_ids = {}
        for k in links:
            fid = self.net.fault_for_link(k)
            if fid is not None:
                fault_ids[k] = fid
                self.net.fault_topology_updated(fid, self.sim.now)
                self.touched.add(fid)
        for key, rec in list(self.flows.items()):
            hit = [k for k in links if _uses_link(rec.path, *k)]
            if not hit:
                continue
            fid = fault_ids.get(hit[0])
            path = self.view.shortest_path(rec.requester, rec.dst, self.weighting)
            if path is None or len(path) < 2:
                self.unreachable += 1
                del self.flows[key]
                continue
            rec.path = path
            if fid is not None:
                self.net.fault_repair_issued(fid)
            if self.stack == "usdn":
                digest = FlowDigest(rec.src, rec.dst, rec.flow_id)
                fts = self._packet("FTS", rec.requester, [self._usdn_rule(digest, path)],
                                   flow_id=rec.flow_id, fault_id=fid)
                out.append((fts, self._hint(rec.requester)))
            else:
                out.extend(self._wise_rules(path, None, rec.requester, fid) or [])
        return out

    def _on_device(self, req: ControllerRequest):
        target, command = req.packet.body
        return [(self._packet("DEVICE", target, command), self._hint(target))]

    def expire_flows(self, now: int) -> None:
        life = self.net.cfg.usdn.flow_lifetime if self.stack == "usdn" else self.net.cfg.wise.entry_ttl
        for key, rec in list(self.flows.items()):
            if now - rec.installed >= life:
                del self.flows[key]

    def audit(self, now: int, period: int) -> list:
        """Second detection path: nodes silent for two state-update periods."""
        self.touched = set()
        stale = [n for n, rec in self.view.nodes.items()
                 if n != self.net.sink and now - rec.last_seen > 2 * period]
        links = []
        for n in stale:
            for other in list(self.view.neighbors(n)):
                self.view.remove_link(n, other)
                links.append(TopologyView.key(n, other))
        return self._repair(links) if links else []


class Gateway:
    """The sink's border: classifies upward control and relays it to the controller."""

    def __init__(self, net, controller: Controller):
        self.net = net
        self.sim = net.sim
        self.controller = controller
        self.placement = controller.placement
        # measurement mode: answers are timed at the border but not sent into the mesh
        self.absorb = False

    def classify(self, pkt: Packet) -> str | None:
        kind = pkt.kind
        if kind == "DAO":
            return JOIN if pkt.body.needs_conf else None
        if kind == "NSU":
            return STATE_UPDATE
        if kind == "REPORT":
            return JOIN if pkt.body.join else STATE_UPDATE
        if kind in ("FTQ", "REQUEST"):
            return FLOW_QUERY
        if kind == "LINKFAIL":
            return LINK_FAILURE
        if kind == DEVICE:
            return DEVICE
        return None

    def up(self, pkt: Packet) -> None:
        now = self.sim.now
        if pkt.kind == "DAO":
            sink = self.net.nodes[self.net.sink]
            if pkt.body.sender != self.net.sink:
                sink.rpl.table.root_register_dao(pkt.body, now)
        kind = self.classify(pkt)
        if kind is None:
            return
        req = ControllerRequest(kind, now, pkt.origin if pkt.kind != "DAO" else pkt.body.sender, pkt, pkt.size)
        delay = self.placement.one_way(pkt.size)
        if delay:
            self.sim.schedule_in(delay, self.controller.submit, req, target=CONTROLLER)
        else:
            self.controller.submit(req)

    def down(self, pkt: Packet, route_hint: list | None, req: ControllerRequest | None = None) -> None:
        delay = self.placement.one_way(pkt.size)
        if delay:
            self.sim.schedule_in(delay, self._inject, pkt, route_hint, req, target=CONTROLLER)
        else:
            self._inject(pkt, route_hint, req)

    def _inject(self, pkt: Packet, route_hint, req) -> None:
        if req is not None and not req.answered:
            req.answered = True
            self.controller.response_times.append(self.sim.now - req.arrival)
            if req.kind == FLOW_QUERY:
                self.controller.flow_response_times.append(self.sim.now - req.arrival)
        if self.absorb:
            return
        self.net.nodes[self.net.sink].inject_down(pkt, route_hint)

    def device_command(self, target: int, command: str) -> None:
        """Manual trigger for the device on/off service."""
        pkt = Packet(DEVICE, target, CONTROLLER, SIZES["DEVICE"], uid=self.net.next_uid(),
                     created=self.sim.now, body=(target, command))
        self.up(pkt)
